//! Representative training-set selection: PCA projection of whole samples
//! followed by k-means clustering, keeping the sample nearest each centroid.
//!
//! The principal directions are computed by the method of snapshots: the
//! eigendecomposition of the `N_s x N_s` Gram matrix of centered samples
//! yields the left singular vectors and singular values of the data matrix
//! without ever forming it, so million-entry trajectories stay cheap.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, PdeCase};
use crate::error::{GnsError, Result};
use crate::tensor::gemm;

/// Columns processed per block when streaming over sample entries.
const BLOCK: usize = 4096;
/// Eigenvalues of the Gram matrix below this fraction of the largest are
/// treated as zero when determining the rank.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlattenMode {
    /// Every snapshot of the trajectory.
    FullTrajectory,
    /// The initial snapshot only.
    InitialCondition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub n_components: usize,
    pub n_select: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub flatten_mode: FlattenMode,
}

impl SelectionConfig {
    /// 50 components for the 64x64 systems, 20 for the 32x32 ones.
    pub fn for_case(case: PdeCase, n_select: usize) -> Self {
        let n_components = match case {
            PdeCase::BurgersCoupled | PdeCase::Swe => 50,
            PdeCase::BurgersScalar | PdeCase::AllenCahn => 20,
        };
        SelectionConfig {
            n_components,
            n_select,
            max_iters: 300,
            seed: 0,
            flatten_mode: FlattenMode::FullTrajectory,
        }
    }
}

/// Projection of samples onto their leading principal directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// `[N_s][m]` projections of the centered samples.
    pub scores: Vec<Vec<f64>>,
    /// Singular values of the centered data matrix, descending.
    pub singular_values: Vec<f64>,
    pub mean: Vec<f64>,
    /// `[m][D]` unit principal directions, if requested.
    pub components: Option<Vec<Vec<f64>>>,
    pub warnings: Vec<String>,
}

impl Pca {
    pub fn n_components(&self) -> usize {
        self.singular_values.len()
    }

    /// `mean + sum_k scores[i][k] * components[k]`.
    pub fn reconstruct(&self, i: usize) -> Option<Vec<f64>> {
        let comps = self.components.as_ref()?;
        let mut x = self.mean.clone();
        for (s, c) in self.scores[i].iter().zip(comps) {
            x.iter_mut().zip(c).for_each(|(x, c)| *x += s * c);
        }
        Some(x)
    }
}

/// Apply `f(block_start, centered_block)` over column blocks of the
/// centered data matrix, where `centered_block` is `[N_s, width]` row-major.
fn for_each_block(samples: &[&[f64]], mean: &[f64], mut f: impl FnMut(usize, usize, &[f64])) {
    let (ns, dim) = (samples.len(), mean.len());
    let mut buf = vec![0.0; ns * BLOCK.min(dim)];
    for start in (0..dim).step_by(BLOCK) {
        let w = BLOCK.min(dim - start);
        for (i, s) in samples.iter().enumerate() {
            for j in 0..w {
                buf[i * w + j] = s[start + j] - mean[start + j];
            }
        }
        f(start, w, &buf[..ns * w]);
    }
}

/// Project samples onto their top `m` principal directions.
///
/// Each direction is signed so that its largest-magnitude entry (first one
/// on ties) is positive. If the centered data has rank below `m`, only the
/// rank-many directions are returned and a warning is recorded; a data set
/// of identical samples keeps one all-zero score column.
pub fn pca_project(samples: &[&[f64]], m: usize, keep_components: bool) -> Result<Pca> {
    let ns = samples.len();
    if ns < 2 {
        return Err(GnsError::Config(format!("PCA needs at least two samples, got {ns}")));
    }
    let dim = samples[0].len();
    if dim == 0 || samples.iter().any(|s| s.len() != dim) {
        return Err(GnsError::dim("pca", "samples must be non-empty and of equal length"));
    }
    if m == 0 {
        return Err(GnsError::Config("n_components must be at least 1".into()));
    }
    let mut mean = vec![0.0; dim];
    for s in samples {
        mean.iter_mut().zip(s.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|v| *v /= ns as f64);

    let mut gram = vec![0.0; ns * ns];
    for_each_block(samples, &mean, |_, w, c| {
        gemm(ns, w, ns, c, false, c, true, 1.0, &mut gram);
    });
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(ns, ns, &gram));
    let mut order: Vec<usize> = (0..ns).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .take_while(|&&k| lmax > 0.0 && eig.eigenvalues[k] > RANK_TOLERANCE * lmax)
        .count();
    let mut warnings = Vec::new();
    let used = m.min(rank).max(1);
    if m > rank {
        let msg = format!("requested {m} principal components but the centered data has rank {rank}; using {used}");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    // Left singular vectors u_k and singular values; right singular vectors
    // follow as v_k = C^T u_k / s_k.
    let sigma: Vec<f64> = order[..used].iter().map(|&k| eig.eigenvalues[k].max(0.0).sqrt()).collect();
    let mut u = vec![0.0; ns * used];
    for (col, &k) in order[..used].iter().enumerate() {
        for i in 0..ns {
            u[i * used + col] = eig.eigenvectors[(i, k)];
        }
    }
    let inv_sigma: Vec<f64> = sigma.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect();
    let mut best = vec![(0.0f64, 1.0f64); used];
    let mut components = keep_components.then(|| vec![vec![0.0; dim]; used]);
    let mut vblock = vec![0.0; BLOCK.min(dim) * used];
    for_each_block(samples, &mean, |start, w, c| {
        let vb = &mut vblock[..w * used];
        gemm(w, ns, used, c, true, &u, false, 0.0, vb);
        for j in 0..w {
            for k in 0..used {
                let v = vb[j * used + k] * inv_sigma[k];
                if v.abs() > best[k].0 {
                    best[k] = (v.abs(), v.signum());
                }
                if let Some(comps) = components.as_mut() {
                    comps[k][start + j] = v;
                }
            }
        }
    });
    let signs: Vec<f64> = best.iter().map(|b| b.1).collect();
    if let Some(comps) = components.as_mut() {
        for (c, s) in comps.iter_mut().zip(&signs) {
            c.iter_mut().for_each(|v| *v *= s);
        }
    }
    let scores = (0..ns)
        .map(|i| (0..used).map(|k| signs[k] * sigma[k] * u[i * used + k]).collect())
        .collect();
    Ok(Pca {
        scores,
        singular_values: sigma,
        mean,
        components,
        warnings,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Sum of squared distances to assigned centroids after each assignment.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("at least one assignment")
    }
}

/// k-means++ seeding: first centre uniform, later ones with probability
/// proportional to squared distance from the nearest chosen centre.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // Every remaining point coincides with a centre; take an unused one.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen.iter().map(|&i| points[i].clone()).collect()
}

/// Lloyd's algorithm from k-means++ seeds, run until assignments stop
/// changing or `max_iters` updates. An empty cluster takes the point of the
/// largest cluster that lies farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(GnsError::Config(format!("cannot form {k} clusters from {n} points")));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(GnsError::dim("kmeans", "points differ in dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    for iter in 0..=max_iters {
        let mut changed = false;
        let mut inertia = 0.0;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (c, d) = nearest(p, &centroids);
            inertia += d;
            changed |= *l != c;
            *l = c;
        }
        history.push(inertia);
        if !changed || iter == max_iters {
            break;
        }
        repair_empty(points, &mut centroids, &mut labels);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for ((c, s), &cnt) in centroids.iter_mut().zip(sums).zip(&counts) {
            *c = s.into_iter().map(|v| v / cnt as f64).collect();
        }
    }
    Ok(KMeans {
        centroids,
        labels,
        inertia_history: history,
    })
}

fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], labels: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("k > 0");
        let far = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .map(|i| (i, sq_dist(&points[i], &centroids[largest])))
            .fold((usize::MAX, -1.0), |b, (i, d)| if d > b.1 { (i, d) } else { b })
            .0;
        labels[far] = empty;
        centroids[empty] = points[far].clone();
    }
}

/// The sample nearest each centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub cluster: usize,
    pub id: usize,
    pub distance: f64,
    pub cluster_size: usize,
}

/// One representative per non-empty cluster: the member nearest the centroid
/// (lowest index on ties). Returned sorted by sample id.
pub fn select_representatives(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Representative>> {
    if points.len() != labels.len() || labels.iter().any(|&l| l >= centroids.len()) {
        return Err(GnsError::dim("select_representatives", "labels do not match points and centroids"));
    }
    let mut reps: Vec<Representative> = Vec::with_capacity(centroids.len());
    for (c, centroid) in centroids.iter().enumerate() {
        let members: Vec<usize> = (0..points.len()).filter(|&i| labels[i] == c).collect();
        let best = members
            .iter()
            .map(|&i| (i, sq_dist(&points[i], centroid)))
            .fold(None, |b: Option<(usize, f64)>, (i, d)| match b {
                Some((_, bd)) if bd <= d => b,
                _ => Some((i, d)),
            });
        if let Some((id, d2)) = best {
            reps.push(Representative {
                cluster: c,
                id,
                distance: d2.sqrt(),
                cluster_size: members.len(),
            });
        }
    }
    reps.sort_by_key(|r| r.id);
    Ok(reps)
}

/// Outcome of selecting a training subset from a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub ids: Vec<usize>,
    pub representatives: Vec<Representative>,
    pub n_components_used: usize,
    pub inertia: f64,
    pub warnings: Vec<String>,
}

pub fn select_training_set(dataset: &Dataset, cfg: &SelectionConfig) -> Result<Selection> {
    if cfg.n_select == 0 || cfg.n_select > dataset.len() {
        return Err(GnsError::Config(format!(
            "cannot select {} of {} trajectories",
            cfg.n_select,
            dataset.len()
        )));
    }
    let samples: Vec<&[f64]> = dataset
        .trajectories
        .iter()
        .map(|t| match cfg.flatten_mode {
            FlattenMode::FullTrajectory => t.fields(),
            FlattenMode::InitialCondition => t.snapshot(0),
        })
        .collect();
    let pca = pca_project(&samples, cfg.n_components, false)?;
    let km = kmeans(&pca.scores, cfg.n_select, cfg.seed, cfg.max_iters)?;
    let representatives = select_representatives(&pca.scores, &km.centroids, &km.labels)?;
    Ok(Selection {
        ids: representatives.iter().map(|r| r.id).collect(),
        n_components_used: pca.n_components(),
        inertia: km.inertia(),
        warnings: pca.warnings,
        representatives,
    })
}

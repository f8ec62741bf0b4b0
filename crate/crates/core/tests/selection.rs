mod common;

use common::{random_field, two_cluster_dataset};
use gns_core::selection::{
    kmeans, pca_project, select_representatives, select_training_set, FlattenMode, SelectionConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn blobs(per_blob: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[-20.0, 5.0, 0.0], [20.0, -5.0, 3.0]];
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for i in 0..2 * per_blob {
        let b = (i * 7 + i / 3) % 2;
        points.push(centers[b].iter().map(|c| c + rng.random_range(-1.0..1.0)).collect());
        truth.push(b);
    }
    (points, truth)
}

#[test]
fn centered_pair_projects_symmetrically() {
    let a = random_field(50, 1, 1.0, 3);
    let b = random_field(50, 1, 1.0, 4);
    let pca = pca_project(&[&a, &b], 1, false).unwrap();
    let (s0, s1) = (pca.scores[0][0], pca.scores[1][0]);
    assert!((s0 + s1).abs() < 1e-12 && s0.abs() > 0.1);
    // The score magnitude is half the distance between the samples.
    assert!((s0.abs() - 0.5 * dist2(&a, &b).sqrt()).abs() < 1e-10);
}

#[test]
fn identical_samples_have_zero_scores() {
    let a = random_field(40, 1, 1.0, 5);
    let pca = pca_project(&[&a, &a, &a], 2, false).unwrap();
    assert!(pca.scores.iter().flatten().all(|s| *s == 0.0));
    assert!(!pca.warnings.is_empty());
}

#[test]
fn full_rank_projection_reconstructs_samples() {
    let samples: Vec<Vec<f64>> = (0..6).map(|i| random_field(30, 1, 2.0, 10 + i)).collect();
    let refs: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
    // Six centered samples span five directions; asking for six warns and reduces.
    let pca = pca_project(&refs, 6, true).unwrap();
    assert_eq!(pca.n_components(), 5);
    assert!(!pca.warnings.is_empty());
    for (i, s) in samples.iter().enumerate() {
        let r = pca.reconstruct(i).unwrap();
        assert!(dist2(&r, s).sqrt() < 1e-10);
    }
    // Score inner products equal those of the naively centered samples.
    let mean: Vec<f64> = (0..30).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / 6.0).collect();
    for i in 0..6 {
        for k in 0..6 {
            let want: f64 = (0..30).map(|j| (samples[i][j] - mean[j]) * (samples[k][j] - mean[j])).sum();
            let got: f64 = pca.scores[i].iter().zip(&pca.scores[k]).map(|(a, b)| a * b).sum();
            assert!((want - got).abs() < 1e-9, "({i},{k}) {want} vs {got}");
        }
    }
    // Components: unit length, sign fixed by the largest-magnitude entry.
    for c in pca.components.as_ref().unwrap() {
        assert!((c.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-10);
        let big = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        assert!(big > 0.0);
    }
}

#[test]
fn one_cluster_per_point_has_zero_inertia() {
    let (points, _) = blobs(4, 1);
    let km = kmeans(&points, points.len(), 0, 300).unwrap();
    assert_eq!(km.inertia(), 0.0);
    let mut labels = km.labels.clone();
    labels.sort_unstable();
    labels.dedup();
    assert_eq!(labels.len(), points.len());
}

#[test]
fn separated_blobs_are_recovered() {
    let (points, truth) = blobs(15, 2);
    let km = kmeans(&points, 2, 7, 300).unwrap();
    let flip = km.labels[0] != truth[0];
    for (l, t) in km.labels.iter().zip(&truth) {
        assert_eq!(*l, if flip { 1 - t } else { *t });
    }
}

#[test]
fn inertia_never_increases() {
    let points: Vec<Vec<f64>> = (0..60).map(|i| random_field(4, 1, 1.0, 100 + i)).collect();
    for seed in 0..5 {
        let km = kmeans(&points, 6, seed, 300).unwrap();
        for w in km.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", km.inertia_history);
        }
    }
}

#[test]
fn single_cluster_picks_sample_nearest_the_mean() {
    let points: Vec<Vec<f64>> = (0..25).map(|i| random_field(3, 1, 1.0, 200 + i)).collect();
    let km = kmeans(&points, 1, 0, 300).unwrap();
    let reps = select_representatives(&points, &km.centroids, &km.labels).unwrap();
    let mean: Vec<f64> = (0..3).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / 25.0).collect();
    let nearest = (0..25).min_by(|&a, &b| dist2(&points[a], &mean).total_cmp(&dist2(&points[b], &mean))).unwrap();
    assert_eq!(reps.len(), 1);
    assert_eq!(reps[0].id, nearest);
}

#[test]
fn representatives_are_cluster_argmins() {
    let points: Vec<Vec<f64>> = (0..40).map(|i| random_field(5, 1, 1.0, 300 + i)).collect();
    let km = kmeans(&points, 5, 3, 300).unwrap();
    let reps = select_representatives(&points, &km.centroids, &km.labels).unwrap();
    assert!(reps.windows(2).all(|w| w[0].id < w[1].id));
    for r in &reps {
        assert_eq!(km.labels[r.id], r.cluster);
        let c = &km.centroids[r.cluster];
        for (i, p) in points.iter().enumerate() {
            if km.labels[i] == r.cluster {
                assert!(dist2(&points[r.id], c) <= dist2(p, c));
            }
        }
    }
}

#[test]
fn two_cluster_trajectories_yield_one_id_per_cluster() {
    let (ds, blob) = two_cluster_dataset(10, 9);
    for mode in [FlattenMode::FullTrajectory, FlattenMode::InitialCondition] {
        let cfg = SelectionConfig {
            n_components: 4,
            n_select: 2,
            max_iters: 300,
            seed: 11,
            flatten_mode: mode,
        };
        let first = select_training_set(&ds, &cfg).unwrap();
        assert_eq!(first.ids.len(), 2);
        assert_ne!(blob[first.ids[0]], blob[first.ids[1]]);
        for _ in 0..10 {
            assert_eq!(select_training_set(&ds, &cfg).unwrap(), first);
        }
    }
}

#[test]
fn selecting_everything_returns_all_ids() {
    let (ds, _) = two_cluster_dataset(3, 1);
    let cfg = SelectionConfig {
        n_components: 3,
        n_select: 6,
        max_iters: 300,
        seed: 0,
        flatten_mode: FlattenMode::FullTrajectory,
    };
    assert_eq!(select_training_set(&ds, &cfg).unwrap().ids, (0..6).collect::<Vec<_>>());
    let too_many = SelectionConfig { n_select: 7, ..cfg };
    assert!(select_training_set(&ds, &too_many).unwrap_err().is_config());
}

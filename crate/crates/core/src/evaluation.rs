//! Explicit-Euler autoregressive rollout and relative L2 error metrics.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::error::{GnsError, Result};
use crate::graphs::{build_topology, GraphTopology};
use crate::model::{forward, GnsParams};
use crate::training::Normalizer;

/// States with any entry beyond this magnitude count as diverged.
pub const OVERFLOW: f64 = 1e10;

/// Snapshots produced by a rollout, possibly cut short.
#[derive(Debug)]
pub struct Rollout {
    /// Node-major snapshots `[k, n, C]` including the initial state.
    pub fields: Vec<f64>,
    pub snapshot_len: usize,
    /// Why the rollout stopped early, if it did.
    pub failure: Option<GnsError>,
}

impl Rollout {
    pub fn n_snapshots(&self) -> usize {
        self.fields.len() / self.snapshot_len
    }

    pub fn into_result(self) -> Result<Vec<f64>> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self.fields),
        }
    }
}

/// `u^{t+1} = u^t + dt * f(u^t)` for `n_steps` steps.
///
/// A non-finite or overflowing state (or a non-finite derivative) stops the
/// rollout with [`GnsError::RolloutDivergence`] carrying the 1-based step;
/// the snapshots computed before it are kept.
pub fn rollout_with(u0: &[f64], dt: f64, n_steps: usize, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Rollout {
    let len = u0.len();
    let mut fields = Vec::with_capacity(len * (n_steps + 1));
    fields.extend_from_slice(u0);
    let mut u = u0.to_vec();
    for step in 1..=n_steps {
        let du = match f(&u) {
            Ok(du) => du,
            Err(GnsError::NonFinite(_)) => return diverged(fields, len, step),
            Err(e) => {
                return Rollout {
                    fields,
                    snapshot_len: len,
                    failure: Some(e),
                }
            }
        };
        if du.len() != len {
            return Rollout {
                fields,
                snapshot_len: len,
                failure: Some(GnsError::dim("rollout", "derivative does not match state")),
            };
        }
        u.iter_mut().zip(&du).for_each(|(u, d)| *u += dt * d);
        if u.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW) {
            return diverged(fields, len, step);
        }
        fields.extend_from_slice(&u);
    }
    Rollout {
        fields,
        snapshot_len: len,
        failure: None,
    }
}

fn diverged(fields: Vec<f64>, len: usize, step: usize) -> Rollout {
    Rollout {
        fields,
        snapshot_len: len,
        failure: Some(GnsError::RolloutDivergence { step }),
    }
}

/// Roll the trained model forward from `u0`.
pub fn rollout(
    u0: &[f64],
    topo: &GraphTopology,
    params: &GnsParams,
    norm: &Normalizer,
    dt: f64,
    n_steps: usize,
) -> Rollout {
    rollout_with(u0, dt, n_steps, |u| forward(u, topo, params, norm))
}

/// `||pred - truth|| / ||truth||` over all entries.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(GnsError::dim("relative_l2", format!("{} vs {} entries", pred.len(), truth.len())));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if den == 0.0 {
        return Err(GnsError::UndefinedMetric);
    }
    Ok((num / den).sqrt())
}

/// Squared error and squared truth norm of one channel of interleaved data.
fn channel_sums(pred: &[f64], truth: &[f64], channels: usize, c: usize) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, t) in pred.iter().skip(c).step_by(channels).zip(truth.iter().skip(c).step_by(channels)) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    (num, den)
}

/// Relative L2 of each channel of node-major data.
pub fn channel_relative_l2(pred: &[f64], truth: &[f64], channels: usize) -> Result<Vec<f64>> {
    if pred.len() != truth.len() || channels == 0 || truth.len() % channels != 0 {
        return Err(GnsError::dim("relative_l2", "shapes do not match"));
    }
    (0..channels)
        .map(|c| {
            let (num, den) = channel_sums(pred, truth, channels, c);
            if den == 0.0 {
                Err(GnsError::UndefinedMetric)
            } else {
                Ok((num / den).sqrt())
            }
        })
        .collect()
}

/// Errors of one test trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub trajectory: usize,
    /// `[Nt, n, C]` predictions.
    pub predicted: Vec<f64>,
    /// `[Nt][C]`, `None` where the true field has zero norm.
    pub per_step: Vec<Vec<Option<f64>>>,
    /// Relative L2 per channel over the whole space-time block.
    pub overall: Vec<f64>,
    /// Per channel `(sum of squared errors, sum of squared truth)`.
    pub sums: Vec<(f64, f64)>,
}

impl RolloutResult {
    pub fn new(trajectory: usize, predicted: Vec<f64>, truth: &[f64], snapshot_len: usize, channels: usize) -> Result<Self> {
        if predicted.len() != truth.len() || snapshot_len == 0 || truth.len() % snapshot_len != 0 {
            return Err(GnsError::dim("rollout result", "prediction and truth differ in shape"));
        }
        let per_step = predicted
            .chunks_exact(snapshot_len)
            .zip(truth.chunks_exact(snapshot_len))
            .map(|(p, t)| {
                (0..channels)
                    .map(|c| {
                        let (num, den) = channel_sums(p, t, channels, c);
                        (den > 0.0).then(|| (num / den).sqrt())
                    })
                    .collect()
            })
            .collect();
        let sums: Vec<(f64, f64)> = (0..channels).map(|c| channel_sums(&predicted, truth, channels, c)).collect();
        let overall = channel_relative_l2(&predicted, truth, channels)?;
        Ok(RolloutResult {
            trajectory,
            predicted,
            per_step,
            overall,
            sums,
        })
    }
}

/// Aggregate errors over a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub channel_names: Vec<String>,
    pub dt: f64,
    pub results: Vec<RolloutResult>,
    /// `(trajectory, step)` of rollouts that diverged; excluded from means.
    pub diverged: Vec<(usize, usize)>,
    /// Mean over trajectories of the per-trajectory relative L2.
    pub mean_overall: Vec<f64>,
    /// Relative L2 of all test trajectories stacked together.
    pub pooled_overall: Vec<f64>,
    /// `[Nt][C]` mean per-timestep error over trajectories where defined.
    pub mean_curve: Vec<Vec<Option<f64>>>,
}

/// Roll out every trajectory in `ids` from its initial state and score it.
pub fn evaluate_suite(dataset: &Dataset, ids: &[usize], params: &GnsParams, norm: &Normalizer) -> Result<SuiteReport> {
    let topo = build_topology(dataset.grid)?;
    let channels = dataset.channels();
    let nt = dataset.n_snapshots();
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.is_empty() {
        return Err(GnsError::Config("no test trajectories".into()));
    }
    for &id in &sorted {
        if id >= dataset.len() {
            return Err(GnsError::Config(format!("test id {id} out of range ({} available)", dataset.len())));
        }
    }
    let outcomes: Vec<Result<std::result::Result<RolloutResult, (usize, usize)>>> = sorted
        .par_iter()
        .map(|&id| {
            let traj = &dataset.trajectories[id];
            let r = rollout(traj.snapshot(0), &topo, params, norm, traj.dt, nt - 1);
            match r.failure {
                Some(GnsError::RolloutDivergence { step }) => Ok(Err((id, step))),
                Some(e) => Err(e),
                None => RolloutResult::new(id, r.fields, traj.fields(), traj.n_nodes * channels, channels).map(Ok),
            }
        })
        .collect();
    let mut results = Vec::new();
    let mut diverged = Vec::new();
    for o in outcomes {
        match o? {
            Ok(r) => results.push(r),
            Err(d) => diverged.push(d),
        }
    }
    if !diverged.is_empty() {
        log::warn!("{} of {} rollouts diverged and are excluded", diverged.len(), sorted.len());
    }
    let k = results.len().max(1) as f64;
    let mean_overall = (0..channels).map(|c| results.iter().map(|r| r.overall[c]).sum::<f64>() / k).collect();
    let pooled_overall = (0..channels)
        .map(|c| {
            let (num, den) = results.iter().fold((0.0, 0.0), |a, r| (a.0 + r.sums[c].0, a.1 + r.sums[c].1));
            if den > 0.0 {
                (num / den).sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    let mean_curve = (0..nt)
        .map(|t| {
            (0..channels)
                .map(|c| {
                    let vals: Vec<f64> = results.iter().filter_map(|r| r.per_step[t][c]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect()
        })
        .collect();
    Ok(SuiteReport {
        channel_names: dataset.case().channel_names().iter().map(|s| s.to_string()).collect(),
        dt: dataset.dt(),
        results,
        diverged,
        mean_overall,
        pooled_overall,
        mean_curve,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

impl SuiteReport {
    /// `trajectory,status,diverged_step,eps_<ch>...`
    pub fn per_trajectory_csv(&self) -> String {
        let mut s = String::from("trajectory,status,diverged_step");
        for ch in &self.channel_names {
            write!(s, ",eps_{ch}").unwrap();
        }
        s.push('\n');
        let mut rows: Vec<(usize, String)> = self
            .results
            .iter()
            .map(|r| {
                let errs: String = r.overall.iter().map(|e| format!(",{e:e}")).collect();
                (r.trajectory, format!("{},ok,{errs}\n", r.trajectory))
            })
            .collect();
        rows.extend(self.diverged.iter().map(|&(id, step)| {
            let blanks = ",".repeat(self.channel_names.len());
            (id, format!("{id},diverged,{step}{blanks}\n"))
        }));
        rows.sort_by_key(|r| r.0);
        rows.into_iter().for_each(|r| s.push_str(&r.1));
        s
    }

    /// `t,mean_eps_<ch>...`; empty cells where no trajectory defines the error.
    pub fn error_curve_csv(&self) -> String {
        let mut s = String::from("t");
        for ch in &self.channel_names {
            write!(s, ",mean_eps_{ch}").unwrap();
        }
        s.push('\n');
        for (t, row) in self.mean_curve.iter().enumerate() {
            write!(s, "{}", t as f64 * self.dt).unwrap();
            for v in row {
                write!(s, ",{}", fmt_opt(*v)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// One row per channel with both aggregation variants.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("channel,mean_of_ratios,pooled_ratio,n_evaluated,n_diverged\n");
        for (c, ch) in self.channel_names.iter().enumerate() {
            writeln!(
                s,
                "{ch},{:e},{:e},{},{}",
                self.mean_overall[c],
                self.pooled_overall[c],
                self.results.len(),
                self.diverged.len()
            )
            .unwrap();
        }
        s
    }
}

/// Snapshot indices nearest the given times, deduplicated and in range.
pub fn snapshot_indices(times: &[f64], dt: f64, n_snapshots: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = times
        .iter()
        .map(|t| ((t / dt).round().max(0.0) as usize).min(n_snapshots.saturating_sub(1)))
        .collect();
    idx.dedup();
    idx
}

/// Truth and prediction of one rollout at selected snapshots:
/// `t,ix,iy,channel,truth,pred`.
pub fn sample_fields_csv(result: &RolloutResult, truth: &[f64], grid: crate::datagen::GridSpec, channels: usize, dt: f64, snapshots: &[usize]) -> String {
    let mut s = String::from("t,ix,iy,channel,truth,pred\n");
    let len = grid.len() * channels;
    for &k in snapshots {
        let (p, t) = (&result.predicted[k * len..(k + 1) * len], &truth[k * len..(k + 1) * len]);
        for node in 0..grid.len() {
            for c in 0..channels {
                let i = node * channels + c;
                writeln!(s, "{},{},{},{c},{:e},{:e}", k as f64 * dt, node % grid.nx, node / grid.nx, t[i], p[i]).unwrap();
            }
        }
    }
    s
}

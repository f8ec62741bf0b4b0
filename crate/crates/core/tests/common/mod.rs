//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing in here calls into the code paths it is used to check: gradients
//! come from central finite differences, erf from its Maclaurin series.

#![allow(dead_code)]

use gns_core::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error with an absolute floor for near-zero entries.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Runs `f` on a fresh tape with every input as a gradient-requiring leaf and
/// returns (analytic gradients, central-difference gradients).
pub fn grads_vs_fd<F>(inputs: &[Tensor], f: F) -> (Vec<Vec<f64>>, Vec<Vec<f64>>)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| tape.grad(*v).unwrap().to_vec()).collect();

    let eval = |ins: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone()).unwrap()).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut numeric = Vec::new();
    for (k, t) in inputs.iter().enumerate() {
        let mut g = vec![0.0; t.len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            *gi = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        numeric.push(g);
    }
    (analytic, numeric)
}

pub fn max_rel_err(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

/// erf via its Maclaurin series, summed until terms vanish. Accurate to
/// roughly machine precision for |x| <= 3.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    for n in 1..200 {
        term *= -x2 / n as f64;
        let contrib = term / (2 * n + 1) as f64;
        sum += contrib;
        if contrib.abs() < 1e-18 {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// A fixed pseudo-random direction used to turn tensor outputs into scalars.
pub fn weights_like(len: usize, seed: u64) -> Tensor {
    random_tensor(&[len], seed)
}

pub fn l2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// ||a - b|| / ||b||.
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / l2(b)
}

/// Observed order from three solutions at successively halved step sizes:
/// `log2(|u1 - u2| / |u2 - u4|)`.
pub fn self_convergence_order(u1: &[f64], u2: &[f64], u4: &[f64]) -> f64 {
    let d = |a: &[f64], b: &[f64]| l2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
    (d(u1, u2) / d(u2, u4)).log2()
}

pub mod reference;

/// Node-major field on `n` nodes with `c` channels, uniform in `[-amp, amp]`.
pub fn random_field(n: usize, c: usize, amp: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * c).map(|_| rng.random_range(-amp..=amp)).collect()
}

/// Normalizer with non-trivial statistics, for exercising the scaling paths.
pub fn skewed_normalizer(c: usize) -> gns_core::training::Normalizer {
    use gns_core::training::{ChannelStats, Normalizer};
    let stats = |w: usize, m: f64, s: f64| ChannelStats {
        mean: (0..w).map(|i| m + 0.05 * i as f64).collect(),
        std: (0..w).map(|i| s + 0.1 * i as f64).collect(),
    };
    Normalizer {
        field: stats(c, 0.1, 0.6),
        edge_diff: stats(c + 1, 0.02, 0.3),
        target: stats(c, -0.2, 1.7),
    }
}

/// Largest relative error between the tape gradient of
/// `mse(forward(u), target)` and central differences over `samples`
/// randomly chosen parameter entries.
pub fn model_gradient_check(
    params: &gns_core::model::GnsParams,
    topo: &gns_core::graphs::GraphTopology,
    u: &[f64],
    target: &[f64],
    norm: &gns_core::training::Normalizer,
    samples: usize,
    seed: u64,
) -> f64 {
    let total = params.count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<(usize, usize)> = (0..samples)
        .map(|_| {
            let mut flat_index = rng.random_range(0..total);
            let mut k = 0;
            while flat_index >= params.tensors()[k].len() {
                flat_index -= params.tensors()[k].len();
                k += 1;
            }
            (k, flat_index)
        })
        .collect();
    model_gradient_check_at(params, topo, u, target, norm, &entries)
}

/// As [`model_gradient_check`] at explicit `(tensor, entry)` positions.
pub fn model_gradient_check_at(
    params: &gns_core::model::GnsParams,
    topo: &gns_core::graphs::GraphTopology,
    u: &[f64],
    target: &[f64],
    norm: &gns_core::training::Normalizer,
    entries: &[(usize, usize)],
) -> f64 {
    use gns_core::model::forward;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true).unwrap();
    let pred = bound.forward(&mut tape, u, topo, norm).unwrap();
    let t = tape.constant(Tensor::new(tape.value(pred).shape().to_vec(), target.to_vec()).unwrap()).unwrap();
    let loss = tape.mse_loss(pred, t).unwrap();
    tape.backward(loss).unwrap();
    let vars = bound.vars().to_vec();

    let mse = |p: &gns_core::model::GnsParams| -> f64 {
        let y = forward(u, topo, p, norm).unwrap();
        y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
    };
    let mut worst = 0.0f64;
    for &(k, i) in entries {
        let analytic = tape.grad(vars[k]).map_or(0.0, |g| g[i]);
        let mut plus = params.clone();
        plus.tensors_mut()[k].data_mut()[i] += FD_STEP;
        let mut minus = params.clone();
        minus.tensors_mut()[k].data_mut()[i] -= FD_STEP;
        let numeric = (mse(&plus) - mse(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

/// Contract an arbitrary tensor output to a scalar with a fixed weighting so
/// that every output entry influences the checked gradient.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(random_tensor(&shape, seed)).unwrap();
    let zero = tape.constant(Tensor::zeros(&shape)).unwrap();
    let diff = tape.sub(out, w).unwrap();
    // mse(out - w, 0) has a non-trivial gradient everywhere.
    tape.mse_loss(diff, zero).unwrap()
}

/// `per_blob` trajectories around each of two far-apart base fields on a 4x4
/// grid; returns the dataset and the blob of every trajectory.
pub fn two_cluster_dataset(per_blob: usize, seed: u64) -> (gns_core::datagen::Dataset, Vec<usize>) {
    use gns_core::datagen::{Dataset, GridSpec, PdeCase, Physics, Trajectory};
    let grid = GridSpec::new(4, 4);
    let nt = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [random_field(grid.len() * nt, 1, 10.0, seed + 1), random_field(grid.len() * nt, 1, 10.0, seed + 2)];
    let mut trajectories = Vec::new();
    let mut blobs = Vec::new();
    for i in 0..2 * per_blob {
        // Interleave the blobs so membership is not a contiguous index range.
        let blob = i % 2;
        let fields = centers[blob].iter().map(|c| c + rng.random_range(-0.05..0.05)).collect();
        trajectories.push(Trajectory::new(PdeCase::BurgersScalar, grid.len(), 0.01, i as u64, fields).unwrap());
        blobs.push(blob);
    }
    (Dataset::new(grid, Physics::default_for(PdeCase::BurgersScalar), trajectories).unwrap(), blobs)
}

/// Final-time errors of explicit-Euler rollouts with the exact right-hand
/// side at `dt` and `dt / 2`, against the high-accuracy solver on scalar
/// Burgers at 16x16. Returns `(err_dt, err_half)`.
pub fn burgers_euler_errors(dt: f64, final_time: f64, seed: u64) -> (f64, f64) {
    use gns_core::datagen::{initial_condition, rhs_evaluator, solve, CaseSpec, GridSpec, PdeCase, SolverOptions, TimeGrid};
    use gns_core::evaluation::rollout_with;
    let mut spec = CaseSpec::standard(PdeCase::BurgersScalar);
    spec.grid = GridSpec::new(16, 16);
    let u0 = initial_condition(&spec, seed);
    let opts = SolverOptions {
        time: TimeGrid { dt: final_time, snapshots: 2 },
        refine: 4,
        ..SolverOptions::default()
    };
    let truth = solve(spec.physics, spec.grid, &u0, &opts).unwrap();
    let truth = truth.snapshot(1);
    let err = |step: f64| {
        let n = (final_time / step).round() as usize;
        let mut rhs = rhs_evaluator(spec.physics, spec.grid);
        let r = rollout_with(&u0, step, n, |u| {
            let mut out = vec![0.0; u.len()];
            rhs.eval(u, &mut out);
            Ok(out)
        });
        let fields = r.into_result().unwrap();
        rel_l2(&fields[fields.len() - u0.len()..], truth)
    };
    (err(dt), err(dt / 2.0))
}

//! End-to-end acceptance checks. Each test prints one
//! `criterion N: PASS|FAIL ...` line, even under output capture, and asserts
//! the same condition.
//!
//! Criteria 5-7 train the default model and take hours on a single core, so
//! they are `#[ignore]`d; run them with
//! `cargo test --release -p gns-core --test acceptance -- --ignored --nocapture`.

mod common;

use std::f64::consts::TAU;
use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use common::{
    burgers_euler_errors, grads_vs_fd, max_rel_err, model_gradient_check_at, random_field, random_tensor,
    self_convergence_order, skewed_normalizer, two_cluster_dataset, weighted_sum,
};
use gns_core::datagen::{
    generate_dataset, initial_condition, solve, solve_allen_cahn_with, solve_swe, AllenCahnOptions, CaseSpec,
    Dataset, GridSpec, PdeCase, SolverOptions, TimeGrid,
};
use gns_core::evaluation::{evaluate_suite, SuiteReport};
use gns_core::graphs::build_topology;
use gns_core::io::{decode_checkpoint, decode_dataset, encode_checkpoint, encode_dataset, read_checkpoint, read_dataset};
use gns_core::io::{write_checkpoint, write_dataset};
use gns_core::model::{forward, GnsConfig, GnsParams};
use gns_core::selection::{select_training_set, SelectionConfig};
use gns_core::training::{train, TrainConfig};
use gns_core::GnsError;

/// Largest relative error between tape and central-difference gradients.
const GRAD_TOL: f64 = 1e-4;
/// Wall-clock budget of the gradient check.
const GRAD_BUDGET: Duration = Duration::from_secs(60);
/// Parameter entries checked per tensor of the full model.
const ENTRIES_PER_TENSOR: usize = 3;

const HEAT_KERNEL_TOL: f64 = 1e-8;
const MASS_DRIFT_TOL: f64 = 1e-8;
const LAKE_AT_REST_TOL: f64 = 1e-12;
const MIN_ORDER: f64 = 2.0;
const SOLVER_BUDGET: Duration = Duration::from_secs(600);

const EQUIVARIANCE_TOL: f64 = 1e-10;

const EULER_RATIO: f64 = 2.0;
const EULER_RATIO_TOL: f64 = 0.4;

/// Fast-mode accuracy target on held-out scalar Burgers trajectories.
const FAST_ERROR_TARGET: f64 = 0.15;
const FAST_BUDGET: Duration = Duration::from_secs(30 * 60);
/// Final error must stay below this multiple of the error at `t = 0.2`.
const ACCUMULATION_FACTOR: f64 = 5.0;
const SELECTION_RUNS: usize = 10;

/// Writes straight to stdout so the line shows even when output is captured.
fn report(n: usize, pass: bool, detail: String) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
}

/// Every tape primitive, each checked against central differences.
fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut check = |name, inputs: &[gns_core::tensor::Tensor], f: &dyn Fn(&mut _, &[_]) -> _| {
        let (an, num) = grads_vs_fd(inputs, f);
        out.push((name, max_rel_err(&an, &num)));
    };
    let (a, b) = (random_tensor(&[3, 4], 1), random_tensor(&[4, 2], 2));
    check("matmul", &[a.clone(), b.clone()], &|t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y, 3)
    });
    check("linear", &[a.clone(), b.clone(), random_tensor(&[2], 4)], &|t, v| {
        let y = t.linear(v[0], v[1], v[2]).unwrap();
        weighted_sum(t, y, 5)
    });
    let wide = gns_core::tensor::Tensor::new(vec![3, 4], a.data().iter().map(|x| 3.0 * x).collect()).unwrap();
    check("gelu", &[wide], &|t, v| {
        let y = t.gelu(v[0]).unwrap();
        weighted_sum(t, y, 6)
    });
    check("layer_norm", &[a.clone(), random_tensor(&[4], 7), random_tensor(&[4], 8)], &|t, v| {
        let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
        weighted_sum(t, y, 9)
    });
    check("gather_rows", &[a.clone()], &|t, v| {
        let y = t.gather_rows(v[0], Arc::from(vec![2, 0, 0, 1])).unwrap();
        weighted_sum(t, y, 10)
    });
    check("scatter_mean", &[random_tensor(&[5, 2], 11)], &|t, v| {
        let y = t.scatter_mean(v[0], Arc::from(vec![1, 1, 0, 3, 1]), 4).unwrap();
        weighted_sum(t, y, 12)
    });
    check(
        "gather_pair_add",
        &[random_tensor(&[3, 2], 13), random_tensor(&[4, 2], 14), random_tensor(&[5, 2], 15)],
        &|t, v| {
            let y = t
                .gather_pair_add(v[0], Arc::from(vec![0, 2, 2, 1, 0]), v[1], Arc::from(vec![3, 3, 0, 1, 2]), v[2])
                .unwrap();
            weighted_sum(t, y, 16)
        },
    );
    check("concat_cols", &[a.clone(), random_tensor(&[3, 2], 17)], &|t, v| {
        let y = t.concat_cols(&[v[0], v[1]]).unwrap();
        weighted_sum(t, y, 18)
    });
    check("slice_rows", &[a.clone()], &|t, v| {
        let y = t.slice_rows(v[0], 1, 2).unwrap();
        weighted_sum(t, y, 19)
    });
    check("add", &[a.clone(), random_tensor(&[3, 4], 20)], &|t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        weighted_sum(t, y, 21)
    });
    check("sub", &[a.clone(), random_tensor(&[3, 4], 22)], &|t, v| {
        let y = t.sub(v[0], v[1]).unwrap();
        weighted_sum(t, y, 23)
    });
    check("scale", &[a.clone()], &|t, v| {
        let y = t.scale(v[0], -1.7).unwrap();
        weighted_sum(t, y, 24)
    });
    check("col_affine", &[a.clone()], &|t, v| {
        let y = t.col_affine(v[0], &[1.0, -2.0, 0.5, 3.0], &[0.1, 0.0, -0.3, 1.0]).unwrap();
        weighted_sum(t, y, 25)
    });
    check("mse_loss", &[a.clone(), random_tensor(&[3, 4], 26)], &|t, v| t.mse_loss(v[0], v[1]).unwrap());
    out
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let ops = op_gradient_errors();
    let worst_op = ops.iter().cloned().fold(("", 0.0f64), |m, o| if o.1 > m.1 { o } else { m });

    let topo = build_topology(GridSpec::new(4, 4)).unwrap();
    let params = GnsParams::init(GnsConfig::for_case(PdeCase::BurgersScalar), 21).unwrap();
    let norm = skewed_normalizer(1);
    let u = random_field(16, 1, 1.0, 22);
    let target = random_field(16, 1, 2.0, 23);
    // Stratified: a few entries from every parameter tensor.
    let mut entries = Vec::new();
    for (k, t) in params.tensors().iter().enumerate() {
        for j in 0..ENTRIES_PER_TENSOR.min(t.len()) {
            entries.push((k, (j * 7919 + k * 31) % t.len()));
        }
    }
    let model_worst = model_gradient_check_at(&params, &topo, &u, &target, &norm, &entries);
    let elapsed = start.elapsed();

    let pass = worst_op.1 < GRAD_TOL && model_worst < GRAD_TOL && elapsed < GRAD_BUDGET;
    report(
        1,
        pass,
        format!(
            "worst op {} {:.2e}, model {:.2e} over {} entries of {} tensors (tol {GRAD_TOL:e}), {:.1?} (budget {GRAD_BUDGET:?})",
            worst_op.0,
            worst_op.1,
            model_worst,
            entries.len(),
            params.tensors().len(),
            elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_solvers_match_analytic_invariants_and_converge() {
    let start = Instant::now();
    // Allen-Cahn without reaction is the heat equation.
    let grid = GridSpec::new(32, 32);
    let eps = 0.05;
    let (kx, ky) = (3.0, 2.0);
    let ic: Vec<f64> = (0..grid.len())
        .map(|p| {
            let (x, y) = grid.coords(p);
            (TAU * (kx * x + ky * y)).cos()
        })
        .collect();
    let t = solve_allen_cahn_with(&ic, grid, eps, &SolverOptions::default(), AllenCahnOptions { reaction: false })
        .unwrap();
    let mut heat = 0.0f64;
    for s in 0..t.n_snapshots() {
        let decay = (-eps * eps * (kx * kx + ky * ky) * TAU * TAU * s as f64 * t.dt).exp();
        for (v, i) in t.snapshot(s).iter().zip(&ic) {
            heat = heat.max((v - decay * i).abs());
        }
    }

    // Shallow water: mass conservation and an exact lake at rest.
    let spec = CaseSpec::standard(PdeCase::Swe);
    let traj = solve(spec.physics, spec.grid, &initial_condition(&spec, 6), &spec.solver).unwrap();
    let mass = |s: &[f64]| s.chunks_exact(3).map(|c| c[2]).sum::<f64>();
    let m0 = mass(traj.snapshot(0));
    let drift = (0..traj.n_snapshots()).map(|s| ((mass(traj.snapshot(s)) - m0) / m0).abs()).fold(0.0, f64::max);
    let small = GridSpec::new(16, 16);
    let lake = solve_swe(&vec![1.0; small.len()], small, 1.0, 0.002, &SolverOptions::default()).unwrap();
    let rest = lake
        .fields()
        .chunks_exact(3)
        .map(|v| v[0].abs().max(v[1].abs()).max((v[2] - 1.0).abs()))
        .fold(0.0, f64::max);

    // Self-convergence on the standard grids.
    let mut orders = Vec::new();
    for case in PdeCase::ALL {
        let spec = CaseSpec::standard(case);
        let base = SolverOptions {
            // A coarse exponential step keeps Allen-Cahn differences above roundoff.
            etd_steps: if case == PdeCase::AllenCahn { 1 } else { spec.solver.etd_steps },
            ..spec.solver
        };
        let ic = initial_condition(&spec, 11);
        let u: Vec<Vec<f64>> = [1, 2, 4]
            .iter()
            .map(|&refine| {
                let t = solve(spec.physics, spec.grid, &ic, &SolverOptions { refine, ..base }).unwrap();
                t.snapshot(t.n_snapshots() - 1).to_vec()
            })
            .collect();
        orders.push((case, self_convergence_order(&u[0], &u[1], &u[2])));
    }
    let elapsed = start.elapsed();
    let min_order = orders.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);

    let pass = heat < HEAT_KERNEL_TOL
        && drift < MASS_DRIFT_TOL
        && rest < LAKE_AT_REST_TOL
        && min_order >= MIN_ORDER
        && elapsed < SOLVER_BUDGET;
    let orders_text: Vec<String> = orders.iter().map(|(c, o)| format!("{c} {o:.2}")).collect();
    report(
        2,
        pass,
        format!(
            "heat kernel {heat:.1e} (tol {HEAT_KERNEL_TOL:e}), mass drift {drift:.1e} (tol {MASS_DRIFT_TOL:e}), \
             lake at rest {rest:.1e} (tol {LAKE_AT_REST_TOL:e}), orders [{}] (min {MIN_ORDER}), {:.1?} (budget {SOLVER_BUDGET:?})",
            orders_text.join(", "),
            elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_translations_commute_with_the_model() {
    let n = 6;
    let grid = GridSpec::new(n, n);
    let topo = build_topology(grid).unwrap();
    let params = GnsParams::init(GnsConfig::for_case(PdeCase::BurgersScalar), 31).unwrap();
    let norm = skewed_normalizer(1);
    let u = random_field(n * n, 1, 1.0, 32);
    let y = forward(&u, &topo, &params, &norm).unwrap();
    let mut worst = 0.0f64;
    for sy in 0..n {
        for sx in 0..n {
            let perm: Vec<usize> = (0..n * n).map(|p| ((p / n + sy) % n) * n + (p % n + sx) % n).collect();
            let shifted = topo.relabel(&perm).unwrap();
            let mut pu = vec![0.0; u.len()];
            for (i, &pi) in perm.iter().enumerate() {
                pu[pi] = u[i];
            }
            let py = forward(&pu, &shifted, &params, &norm).unwrap();
            for (i, &pi) in perm.iter().enumerate() {
                worst = worst.max((py[pi] - y[i]).abs());
            }
        }
    }
    let pass = worst < EQUIVARIANCE_TOL;
    report(3, pass, format!("max deviation {worst:.1e} over {} shifts (tol {EQUIVARIANCE_TOL:e})", n * n));
    assert!(pass);
}

#[test]
fn criterion_4_rollout_error_is_first_order_in_dt() {
    let (coarse, fine) = burgers_euler_errors(0.01, 0.5, 3);
    let ratio = coarse / fine;
    let pass = (ratio - EULER_RATIO).abs() <= EULER_RATIO_TOL;
    report(
        4,
        pass,
        format!("error ratio {ratio:.3} ({coarse:.3e} / {fine:.3e}), target {EULER_RATIO} +/- {EULER_RATIO_TOL}"),
    );
    assert!(pass);
}

/// Scalar Burgers at 16x16 with one trajectory pool shared by every fast-mode run.
fn fast_dataset(n_samples: usize) -> Dataset {
    let mut spec = CaseSpec::standard(PdeCase::BurgersScalar);
    spec.grid = GridSpec::new(16, 16);
    generate_dataset(&spec, n_samples, 1000).unwrap()
}

const FAST_POOL: usize = 112;
const FAST_TEST: usize = 40;
const FAST_EPOCHS: usize = 150;

const FULL_POOL: usize = 200;
const FULL_TEST: usize = 100;
const FULL_ERROR_TARGET: f64 = 0.05;

/// Select `n_train` trajectories, train the default model for `epochs` and
/// score it on the first `n_test` held-out trajectories.
fn selected_run(ds: &Dataset, n_train: usize, epochs: usize, n_test: usize, seed: u64) -> SuiteReport {
    let mut sel = SelectionConfig::for_case(PdeCase::BurgersScalar, n_train);
    sel.seed = seed;
    let ids = select_training_set(ds, &sel).unwrap().ids;
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::for_case(PdeCase::BurgersScalar)
    };
    let state = train(ds, &ids, &cfg, &GnsConfig::for_case(PdeCase::BurgersScalar)).unwrap();
    let test: Vec<usize> = (0..ds.len()).filter(|i| !ids.contains(i)).take(n_test).collect();
    evaluate_suite(ds, &test, &state.params, &state.normalizer).unwrap()
}

fn fast_run(ds: &Dataset, n_train: usize, seed: u64) -> SuiteReport {
    selected_run(ds, n_train, FAST_EPOCHS, FAST_TEST, seed)
}

/// The 12-trajectory fast-mode model, trained once and shared by the
/// accuracy and accumulation checks; returns the report and training time.
fn fast_model() -> &'static (SuiteReport, Duration, f64) {
    static RUN: OnceLock<(SuiteReport, Duration, f64)> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let ds = fast_dataset(FAST_POOL);
        let report = fast_run(&ds, 12, 0);
        (report, start.elapsed(), ds.trajectories[0].dt)
    })
}

#[test]
#[ignore = "trains the default model for hours on one core"]
fn criterion_5_fast_mode_accuracy() {
    let (r, elapsed, _) = fast_model();
    let elapsed = *elapsed;
    let err = r.mean_overall[0];
    let pass = err < FAST_ERROR_TARGET && elapsed < FAST_BUDGET && r.diverged.is_empty();
    report(
        5,
        pass,
        format!(
            "mean relative L2 {err:.4} (target {FAST_ERROR_TARGET}), {} diverged, {:.1?} (budget {FAST_BUDGET:?})",
            r.diverged.len(),
            elapsed
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "trains the default model at 32x32 for days on one core"]
fn criterion_5_full_scale_accuracy() {
    let start = Instant::now();
    let ds = generate_dataset(&CaseSpec::standard(PdeCase::BurgersScalar), FULL_POOL, 2000).unwrap();
    let r = selected_run(&ds, 30, TrainConfig::for_case(PdeCase::BurgersScalar).epochs, FULL_TEST, 0);
    let err = r.mean_overall[0];
    let pass = err < FULL_ERROR_TARGET && r.diverged.is_empty();
    report(
        5,
        pass,
        format!(
            "full scale: mean relative L2 {err:.4} (target {FULL_ERROR_TARGET}), {} diverged, {:.1?}",
            r.diverged.len(),
            start.elapsed()
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "trains the default model six times"]
fn criterion_6_more_training_data_helps() {
    let ds = fast_dataset(FAST_POOL);
    let mut small = Vec::new();
    let mut large = Vec::new();
    for seed in 0..3 {
        small.push(fast_run(&ds, 30, seed).mean_overall[0]);
        large.push(fast_run(&ds, 50, seed).mean_overall[0]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let pass = mean(&large) <= mean(&small);
    report(6, pass, format!("mean error with 30: {:.4} {small:.4?}, with 50: {:.4} {large:.4?}", mean(&small), mean(&large)));
    assert!(pass);
}

#[test]
#[ignore = "trains the default model for hours on one core"]
fn criterion_7_errors_accumulate_boundedly() {
    let (r, _, dt) = fast_model();
    let at = |t: f64| r.mean_curve[(t / dt).round() as usize][0];
    let early = at(0.2).unwrap();
    let last = r.mean_curve.last().unwrap()[0].unwrap();
    let pass = last < ACCUMULATION_FACTOR * early;
    report(7, pass, format!("final error {last:.4} vs {early:.4} at t=0.2 (ratio {:.2}, max {ACCUMULATION_FACTOR})", last / early));
    assert!(pass);
}

#[test]
fn criterion_8_selection_is_deterministic_and_covers_clusters() {
    let (ds, blob) = two_cluster_dataset(10, 9);
    let cfg = SelectionConfig {
        n_components: 4,
        n_select: 2,
        max_iters: 300,
        seed: 11,
        ..SelectionConfig::for_case(PdeCase::BurgersScalar, 2)
    };
    let runs: Vec<Vec<usize>> = (0..SELECTION_RUNS).map(|_| select_training_set(&ds, &cfg).unwrap().ids).collect();
    let identical = runs.iter().all(|r| *r == runs[0]);
    let one_per_cluster = runs[0].len() == 2 && blob[runs[0][0]] != blob[runs[0][1]];
    let pass = identical && one_per_cluster;
    report(
        8,
        pass,
        format!("ids {:?} identical over {SELECTION_RUNS} runs: {identical}, one per cluster: {one_per_cluster}", runs[0]),
    );
    assert!(pass);
}

#[test]
fn criterion_9_files_round_trip_and_detect_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = CaseSpec::standard(PdeCase::BurgersScalar);
    spec.grid = GridSpec::new(8, 8);
    spec.solver.time = TimeGrid { dt: 0.01, snapshots: 4 };
    let ds = generate_dataset(&spec, 3, 5).unwrap();
    let d1 = dir.path().join("a.gnsd");
    let d2 = dir.path().join("b.gnsd");
    write_dataset(&d1, &ds, false).unwrap();
    write_dataset(&d2, &read_dataset(&d1).unwrap(), false).unwrap();
    let dataset_identical = std::fs::read(&d1).unwrap() == std::fs::read(&d2).unwrap();

    let model = GnsConfig {
        latent: 8,
        mp_layers: 1,
        hidden: vec![8],
        ..GnsConfig::for_channels(1)
    };
    let cfg = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::default() };
    let state = train(&ds, &[0, 1], &cfg, &model).unwrap();
    let c1 = dir.path().join("a.gnsc");
    let c2 = dir.path().join("b.gnsc");
    write_checkpoint(&c1, &state, false).unwrap();
    write_checkpoint(&c2, &read_checkpoint(&c1).unwrap(), false).unwrap();
    let checkpoint_identical = std::fs::read(&c1).unwrap() == std::fs::read(&c2).unwrap();

    let flip = |mut b: Vec<u8>| {
        let mid = b.len() / 2;
        b[mid] ^= 0x04;
        b
    };
    let p = dir.path();
    let dataset_caught =
        matches!(decode_dataset(&flip(encode_dataset(&ds).unwrap()), p), Err(GnsError::Checksum { .. }));
    let checkpoint_caught =
        matches!(decode_checkpoint(&flip(encode_checkpoint(&state, true)), p), Err(GnsError::Checksum { .. }));

    let pass = dataset_identical && checkpoint_identical && dataset_caught && checkpoint_caught;
    report(
        9,
        pass,
        format!(
            "byte-identical dataset {dataset_identical}, checkpoint {checkpoint_identical}; \
             corruption detected dataset {dataset_caught}, checkpoint {checkpoint_caught}"
        ),
    );
    assert!(pass);
}

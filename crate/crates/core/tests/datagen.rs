mod common;

use std::f64::consts::TAU;
use std::time::Instant;

use common::{l2, rel_l2, self_convergence_order};
use gns_core::datagen::{
    deinterleave, generate_dataset, initial_condition, sample_grf, solve, solve_allen_cahn,
    solve_allen_cahn_with, solve_burgers_coupled, solve_burgers_scalar, solve_swe, spectral::Spectral2,
    AllenCahnOptions, CaseSpec, GrfSpec, GridSpec, PdeCase, SolverOptions, TimeGrid,
};
use gns_core::GnsError;

fn final_snapshot(t: &gns_core::datagen::Trajectory) -> Vec<f64> {
    t.snapshot(t.n_snapshots() - 1).to_vec()
}

fn refined(level: usize) -> SolverOptions {
    SolverOptions {
        refine: level,
        ..SolverOptions::default()
    }
}

#[test]
fn grf_variance_matches_sigma() {
    let grid = GridSpec::new(32, 32);
    let spec = GrfSpec::matern(0.125, 0.15);
    let mut acc = 0.0;
    for s in 0..200 {
        let f = sample_grf(grid, &spec.with_seed(s));
        acc += f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
    }
    let var = acc / 200.0;
    let target = 0.15f64 * 0.15;
    assert!((var - target).abs() / target < 0.15, "variance {var} vs {target}");
}

#[test]
fn burgers_constant_ic_is_stationary() {
    let grid = GridSpec::new(16, 16);
    let ic = vec![0.3; grid.len()];
    let t = solve_burgers_scalar(&ic, grid, 0.01, &SolverOptions::default()).unwrap();
    assert_eq!(t.n_snapshots(), 101);
    assert!(t.fields().iter().all(|v| (v - 0.3).abs() < 1e-12));
}

#[test]
fn burgers_diffusion_dominated_modes_decay() {
    let grid = GridSpec::new(16, 16);
    let ic: Vec<f64> = sample_grf(grid, &GrfSpec::matern(0.125, 1e-4).with_seed(5));
    let t = solve_burgers_scalar(&ic, grid, 0.5, &SolverOptions::default()).unwrap();
    let mut sp = Spectral2::new(grid);
    let mut prev: Option<Vec<f64>> = None;
    for s in 0..t.n_snapshots() {
        let mags: Vec<f64> = sp.forward_real(t.snapshot(s)).iter().map(|c| c.norm()).collect();
        if let Some(p) = &prev {
            for (k, (a, b)) in mags.iter().zip(p).enumerate() {
                // Mean mode is conserved; all others shrink.
                if k == 0 {
                    assert!((a - b).abs() < 1e-12);
                } else {
                    assert!(*a <= b + 1e-15, "mode {k} grew at snapshot {s}");
                }
            }
        }
        prev = Some(mags);
    }
}

#[test]
fn burgers_scalar_self_convergence_and_mean_drift() {
    let spec = CaseSpec::standard(PdeCase::BurgersScalar);
    let ic = initial_condition(&spec, 1);
    let start = Instant::now();
    let coarse = solve_burgers_scalar(&ic, spec.grid, 0.01, &refined(1)).unwrap();
    eprintln!("burgers 32x32 trajectory: {:?}", start.elapsed());
    let fine = solve_burgers_scalar(&ic, spec.grid, 0.01, &refined(2)).unwrap();
    let e = rel_l2(&final_snapshot(&coarse), &final_snapshot(&fine));
    eprintln!("burgers scalar refinement difference {e:e}");
    assert!(e < 1e-6);

    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let m0 = mean(coarse.snapshot(0));
    for s in 0..coarse.n_snapshots() {
        assert!((mean(coarse.snapshot(s)) - m0).abs() < 1e-3);
    }
}

#[test]
fn coupled_burgers_symmetry_and_zero() {
    let grid = GridSpec::new(16, 16);
    let ic = sample_grf(grid, &GrfSpec::matern(0.1, 0.2).with_seed(3));
    let t = solve_burgers_coupled(&ic, &ic, grid, 0.01, &SolverOptions::default()).unwrap();
    for s in 0..t.n_snapshots() {
        let f = deinterleave(t.snapshot(s), 2);
        assert_eq!(f[0], f[1]);
    }
    let z = vec![0.0; grid.len()];
    let t = solve_burgers_coupled(&z, &z, grid, 0.01, &SolverOptions::default()).unwrap();
    assert!(t.fields().iter().all(|v| *v == 0.0));
}

#[test]
fn coupled_burgers_self_convergence() {
    let spec = CaseSpec::standard(PdeCase::BurgersCoupled);
    let ic = initial_condition(&spec, 2);
    let start = Instant::now();
    let a = solve(spec.physics, spec.grid, &ic, &refined(1)).unwrap();
    eprintln!("coupled burgers 64x64 trajectory: {:?}", start.elapsed());
    let b = solve(spec.physics, spec.grid, &ic, &refined(2)).unwrap();
    let e = rel_l2(&final_snapshot(&a), &final_snapshot(&b));
    eprintln!("coupled refinement difference {e:e}");
    assert!(e < 1e-6);
}

#[test]
fn allen_cahn_equilibria_are_stationary() {
    let grid = GridSpec::new(16, 16);
    let opts = SolverOptions {
        etd_steps: 20,
        ..SolverOptions::default()
    };
    for c in [1.0, 0.0, -1.0] {
        let ic = vec![c; grid.len()];
        let t = solve_allen_cahn(&ic, grid, 0.05, &opts).unwrap();
        assert!(t.fields().iter().all(|v| (v - c).abs() < 1e-12), "equilibrium {c}");
    }
}

#[test]
fn allen_cahn_linear_limit_matches_heat_kernel() {
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
    let mut worst = 0.0f64;
    for s in 0..t.n_snapshots() {
        let time = s as f64 * 0.01;
        let decay = (-eps * eps * (kx * kx + ky * ky) * TAU * TAU * time).exp();
        for (v, i) in t.snapshot(s).iter().zip(&ic) {
            worst = worst.max((v - decay * i).abs());
        }
    }
    assert!(worst < 1e-8, "heat-kernel error {worst:e}");
}

#[test]
fn allen_cahn_stays_bounded() {
    let spec = CaseSpec::standard(PdeCase::AllenCahn);
    let ic = initial_condition(&spec, 4);
    assert!(ic.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    let start = Instant::now();
    let t = solve(spec.physics, spec.grid, &ic, &spec.solver).unwrap();
    eprintln!("allen-cahn 32x32 trajectory: {:?}", start.elapsed());
    let max = t.fields().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    eprintln!("allen-cahn max |u| = {max}");
    assert!(max <= 1.0 + 1e-3);
}

#[test]
fn swe_lake_at_rest_is_exact() {
    let grid = GridSpec::new(16, 16);
    let t = solve_swe(&vec![1.0; grid.len()], grid, 1.0, 0.002, &SolverOptions::default()).unwrap();
    for s in 0..t.n_snapshots() {
        for (p, v) in t.snapshot(s).chunks_exact(3).enumerate() {
            assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - 1.0).abs() < 1e-12, "node {p}");
        }
    }
}

#[test]
fn swe_conserves_mass_and_converges() {
    let spec = CaseSpec::standard(PdeCase::Swe);
    let ic = initial_condition(&spec, 6);
    let start = Instant::now();
    let a = solve(spec.physics, spec.grid, &ic, &refined(1)).unwrap();
    eprintln!("swe 64x64 trajectory: {:?}", start.elapsed());
    let mass = |s: &[f64]| s.chunks_exact(3).map(|c| c[2]).sum::<f64>();
    let m0 = mass(a.snapshot(0));
    for s in 0..a.n_snapshots() {
        assert!(((mass(a.snapshot(s)) - m0) / m0).abs() < 1e-8);
    }
    let b = solve(spec.physics, spec.grid, &ic, &refined(2)).unwrap();
    let e = rel_l2(&final_snapshot(&a), &final_snapshot(&b));
    eprintln!("swe refinement difference {e:e}");
    assert!(e < 1e-6);
}

#[test]
fn swe_rejects_non_positive_height() {
    let grid = GridSpec::new(16, 16);
    let mut eta = vec![1.0; grid.len()];
    eta[5] = -0.1;
    let err = solve_swe(&eta, grid, 1.0, 0.002, &SolverOptions::default()).unwrap_err();
    assert!(matches!(err, GnsError::Positivity { .. }));
}

#[test]
fn burgers_blowup_is_reported() {
    let grid = GridSpec::new(16, 16);
    let ic = sample_grf(grid, &GrfSpec::matern(0.125, 1.0).with_seed(1));
    let opts = SolverOptions {
        blowup: 0.5,
        ..SolverOptions::default()
    };
    let err = solve_burgers_scalar(&ic, grid, 0.01, &opts).unwrap_err();
    assert!(matches!(err, GnsError::Instability { .. }));
}

#[test]
fn dataset_generation_is_deterministic() {
    let mut spec = CaseSpec::standard(PdeCase::BurgersScalar);
    spec.grid = GridSpec::new(16, 16);
    spec.solver.time = TimeGrid { dt: 0.01, snapshots: 11 };
    let a = generate_dataset(&spec, 3, 40).unwrap();
    let b = generate_dataset(&spec, 3, 40).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trajectories.iter().map(|t| t.ic_seed).collect::<Vec<_>>(), vec![40, 41, 42]);
    assert!(l2(a.trajectories[0].fields()) > 0.0);
}

/// Final snapshots at refinement levels 1, 2 and 4 for one standard case.
fn refinement_ladder(case: PdeCase, base: SolverOptions, seed: u64) -> Vec<Vec<f64>> {
    let spec = CaseSpec::standard(case);
    let ic = initial_condition(&spec, seed);
    [1, 2, 4]
        .iter()
        .map(|&refine| {
            let opts = SolverOptions { refine, ..base };
            final_snapshot(&solve(spec.physics, spec.grid, &ic, &opts).unwrap())
        })
        .collect()
}

#[test]
fn all_solvers_self_converge_at_least_second_order() {
    // A coarse ETD base step keeps the Allen-Cahn differences above roundoff.
    let coarse_etd = SolverOptions {
        etd_steps: 1,
        ..SolverOptions::default()
    };
    for case in PdeCase::ALL {
        let base = if case == PdeCase::AllenCahn { coarse_etd } else { SolverOptions::default() };
        let u = refinement_ladder(case, base, 11);
        let order = self_convergence_order(&u[0], &u[1], &u[2]);
        eprintln!("{case}: observed order {order:.2}");
        assert!(order >= 2.0, "{case}: order {order}");
    }
}

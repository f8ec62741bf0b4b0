//! Ground-truth trajectories for the four periodic benchmark PDEs.
//!
//! Initial conditions are periodic Gaussian random fields ([`grf`]). The
//! Burgers systems are integrated pseudo-spectrally with RK4, Allen-Cahn with
//! ETDRK4, and the shallow-water system with central flux-form finite
//! differences and RK4. Every trajectory is stored node-major as
//! `[Nt, nx*ny, C]`.

mod allen_cahn;
mod burgers;
pub mod grf;
mod rk4;
pub mod spectral;
mod swe;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use allen_cahn::{solve_allen_cahn, solve_allen_cahn_with, AllenCahnOptions};
pub use burgers::{solve_burgers_coupled, solve_burgers_scalar};
pub use grf::{sample_grf, GrfSpec, Kernel};
pub use swe::solve_swe;

use crate::error::{GnsError, Result};

/// Uniform periodic grid on the unit square. Node `p = iy * nx + ix` sits at
/// `(ix / nx, iy / ny)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize) -> Self {
        GridSpec { nx, ny }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn coords(&self, p: usize) -> (f64, f64) {
        ((p % self.nx) as f64 * self.dx(), (p / self.nx) as f64 * self.dy())
    }

    /// Spectral solvers need at least 8 points and an even count per axis.
    pub fn require_spectral(&self) -> Result<()> {
        if self.nx < 8 || self.ny < 8 || self.nx % 2 == 1 || self.ny % 2 == 1 {
            return Err(GnsError::Config(format!(
                "grid {}x{} must be even and at least 8x8",
                self.nx, self.ny
            )));
        }
        Ok(())
    }
}

/// Which benchmark system a trajectory belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeCase {
    BurgersScalar,
    BurgersCoupled,
    AllenCahn,
    Swe,
}

impl PdeCase {
    pub const ALL: [PdeCase; 4] = [
        PdeCase::BurgersScalar,
        PdeCase::BurgersCoupled,
        PdeCase::AllenCahn,
        PdeCase::Swe,
    ];

    pub fn channels(self) -> usize {
        match self {
            PdeCase::BurgersScalar | PdeCase::AllenCahn => 1,
            PdeCase::BurgersCoupled => 2,
            PdeCase::Swe => 3,
        }
    }

    pub fn id(self) -> u8 {
        match self {
            PdeCase::BurgersScalar => 0,
            PdeCase::BurgersCoupled => 1,
            PdeCase::AllenCahn => 2,
            PdeCase::Swe => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        PdeCase::ALL.into_iter().find(|c| c.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            PdeCase::BurgersScalar => "burgers_scalar",
            PdeCase::BurgersCoupled => "burgers_coupled",
            PdeCase::AllenCahn => "allen_cahn",
            PdeCase::Swe => "swe",
        }
    }

    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            PdeCase::BurgersScalar | PdeCase::AllenCahn => &["u"],
            PdeCase::BurgersCoupled => &["u", "v"],
            PdeCase::Swe => &["u", "v", "eta"],
        }
    }
}

impl std::str::FromStr for PdeCase {
    type Err = GnsError;

    fn from_str(s: &str) -> Result<Self> {
        PdeCase::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| GnsError::Config(format!("unknown case {s:?}")))
    }
}

impl std::fmt::Display for PdeCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Physical coefficients of each system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case", deny_unknown_fields)]
pub enum Physics {
    BurgersScalar { nu: f64 },
    BurgersCoupled { mu: f64 },
    AllenCahn { epsilon: f64 },
    Swe { gravity: f64, nu: f64 },
}

impl Physics {
    pub fn default_for(case: PdeCase) -> Self {
        match case {
            PdeCase::BurgersScalar => Physics::BurgersScalar { nu: 0.01 },
            PdeCase::BurgersCoupled => Physics::BurgersCoupled { mu: 0.01 },
            PdeCase::AllenCahn => Physics::AllenCahn { epsilon: 0.05 },
            PdeCase::Swe => Physics::Swe { gravity: 1.0, nu: 0.002 },
        }
    }

    pub fn case(&self) -> PdeCase {
        match self {
            Physics::BurgersScalar { .. } => PdeCase::BurgersScalar,
            Physics::BurgersCoupled { .. } => PdeCase::BurgersCoupled,
            Physics::AllenCahn { .. } => PdeCase::AllenCahn,
            Physics::Swe { .. } => PdeCase::Swe,
        }
    }
}

/// Snapshot spacing and count. The default stores 101 snapshots on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub dt: f64,
    pub snapshots: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            dt: 0.01,
            snapshots: 101,
        }
    }
}

impl TimeGrid {
    pub fn final_time(&self) -> f64 {
        self.dt * (self.snapshots.saturating_sub(1)) as f64
    }
}

/// Time-stepping controls shared by the solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub time: TimeGrid,
    /// Fraction of the RK4 stability limit used for explicit substeps.
    pub cfl: f64,
    /// Multiplies the stability-derived substep count (refinement studies).
    pub refine: usize,
    /// Fine ETDRK4 steps per snapshot interval for Allen-Cahn.
    pub etd_steps: usize,
    /// max |u| above which a run is declared unstable.
    pub blowup: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            time: TimeGrid::default(),
            cfl: 0.5,
            refine: 1,
            etd_steps: 200,
            blowup: 1e3,
        }
    }
}

/// One solution `[Nt, nx*ny, C]` sampled every `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub case: PdeCase,
    pub n_nodes: usize,
    pub channels: usize,
    pub dt: f64,
    pub ic_seed: u64,
    fields: Vec<f64>,
}

impl Trajectory {
    pub fn new(case: PdeCase, n_nodes: usize, dt: f64, ic_seed: u64, fields: Vec<f64>) -> Result<Self> {
        let channels = case.channels();
        let stride = n_nodes * channels;
        if stride == 0 || fields.len() % stride != 0 {
            return Err(GnsError::dim(
                "trajectory",
                format!("{} values are not a whole number of {n_nodes}x{channels} snapshots", fields.len()),
            ));
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(GnsError::Input("trajectory contains non-finite values".into()));
        }
        Ok(Trajectory {
            case,
            n_nodes,
            channels,
            dt,
            ic_seed,
            fields,
        })
    }

    pub fn n_snapshots(&self) -> usize {
        self.fields.len() / (self.n_nodes * self.channels)
    }

    /// Node-major state `[n, C]` at snapshot `t`.
    pub fn snapshot(&self, t: usize) -> &[f64] {
        let s = self.n_nodes * self.channels;
        &self.fields[t * s..(t + 1) * s]
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn into_fields(self) -> Vec<f64> {
        self.fields
    }
}

/// A set of trajectories sharing grid, system and time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub physics: Physics,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(grid: GridSpec, physics: Physics, trajectories: Vec<Trajectory>) -> Result<Self> {
        let case = physics.case();
        if let Some(first) = trajectories.first() {
            let nt = first.n_snapshots();
            for t in &trajectories {
                if t.case != case || t.n_nodes != grid.len() || t.n_snapshots() != nt {
                    return Err(GnsError::Input(
                        "trajectories disagree on case, grid or snapshot count".into(),
                    ));
                }
            }
        }
        Ok(Dataset {
            grid,
            physics,
            trajectories,
        })
    }

    pub fn case(&self) -> PdeCase {
        self.physics.case()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.case().channels()
    }

    pub fn n_snapshots(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.n_snapshots())
    }

    pub fn dt(&self) -> f64 {
        self.trajectories.first().map_or(TimeGrid::default().dt, |t| t.dt)
    }

    /// Subset in the given order.
    pub fn subset(&self, ids: &[usize]) -> Result<Dataset> {
        let mut trajectories = Vec::with_capacity(ids.len());
        for &i in ids {
            let t = self.trajectories.get(i).ok_or_else(|| {
                GnsError::Config(format!("trajectory id {i} out of range ({} available)", self.len()))
            })?;
            trajectories.push(t.clone());
        }
        Dataset::new(self.grid, self.physics, trajectories)
    }
}

/// Full description of how to generate one benchmark dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub grid: GridSpec,
    pub grf: GrfSpec,
    pub physics: Physics,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl CaseSpec {
    /// Standard generation settings for each case.
    pub fn standard(case: PdeCase) -> Self {
        let (grid, grf) = match case {
            PdeCase::BurgersScalar => (GridSpec::new(32, 32), GrfSpec::matern(0.125, 0.15)),
            PdeCase::BurgersCoupled => (GridSpec::new(64, 64), GrfSpec::matern(0.1, 0.2)),
            PdeCase::AllenCahn => (
                GridSpec::new(32, 32),
                GrfSpec {
                    normalize_to: Some([-1.0, 1.0]),
                    ..GrfSpec::squared_exponential(0.05, 1.0)
                },
            ),
            PdeCase::Swe => (GridSpec::new(64, 64), GrfSpec::matern(0.1, 0.2)),
        };
        CaseSpec {
            grid,
            grf,
            physics: Physics::default_for(case),
            solver: SolverOptions::default(),
        }
    }

    pub fn case(&self) -> PdeCase {
        self.physics.case()
    }
}

/// Lowest initial water height allowed after adding the perturbation.
pub const SWE_MIN_INITIAL_HEIGHT: f64 = 0.2;

/// Initial state `[n, C]` for sample `seed`.
pub fn initial_condition(spec: &CaseSpec, seed: u64) -> Vec<f64> {
    let grid = spec.grid;
    let grf = GrfSpec { seed, ..spec.grf };
    match spec.case() {
        PdeCase::BurgersScalar | PdeCase::AllenCahn => sample_grf(grid, &grf),
        PdeCase::BurgersCoupled => {
            let fields = grf::sample_grf_many(grid, &grf, 2);
            interleave(&fields)
        }
        PdeCase::Swe => {
            let eta: Vec<f64> = sample_grf(grid, &grf)
                .into_iter()
                .map(|p| (1.0 + p).max(SWE_MIN_INITIAL_HEIGHT))
                .collect();
            let zeros = vec![0.0; grid.len()];
            interleave(&[zeros.clone(), zeros, eta])
        }
    }
}

/// Node-major interleave of per-channel fields.
pub fn interleave(channels: &[Vec<f64>]) -> Vec<f64> {
    let n = channels.first().map_or(0, |c| c.len());
    let mut out = Vec::with_capacity(n * channels.len());
    for p in 0..n {
        for c in channels {
            out.push(c[p]);
        }
    }
    out
}

/// Split a node-major `[n, C]` state into per-channel fields.
pub fn deinterleave(state: &[f64], channels: usize) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|c| state.iter().skip(c).step_by(channels).copied().collect())
        .collect()
}

/// Integrate one initial condition with the solver for `physics`.
pub fn solve(physics: Physics, grid: GridSpec, ic: &[f64], opts: &SolverOptions) -> Result<Trajectory> {
    match physics {
        Physics::BurgersScalar { nu } => solve_burgers_scalar(ic, grid, nu, opts),
        Physics::BurgersCoupled { mu } => {
            let f = deinterleave(ic, 2);
            solve_burgers_coupled(&f[0], &f[1], grid, mu, opts)
        }
        Physics::AllenCahn { epsilon } => solve_allen_cahn(ic, grid, epsilon, opts),
        Physics::Swe { gravity, nu } => {
            let f = deinterleave(ic, 3);
            solve_swe(&f[2], grid, gravity, nu, opts)
        }
    }
}

/// Generate `n_samples` trajectories with initial-condition seeds
/// `base_seed + i`. Output order follows the sample index.
pub fn generate_dataset(spec: &CaseSpec, n_samples: usize, base_seed: u64) -> Result<Dataset> {
    spec.grid.require_spectral()?;
    spec.grf.validate()?;
    let trajectories = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i as u64;
            let ic = initial_condition(spec, seed);
            let mut traj = solve(spec.physics, spec.grid, &ic, &spec.solver).map_err(|e| GnsError::Sample {
                index: i,
                source: Box::new(e),
            })?;
            traj.ic_seed = seed;
            Ok(traj)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(spec.grid, spec.physics, trajectories)
}

/// Physical-space right-hand side `du/dt = F(u)` of a system on a grid, using
/// the same spatial discretization as the corresponding solver.
pub trait PdeRhs {
    /// `state` and `out` are node-major `[n, C]`.
    fn eval(&mut self, state: &[f64], out: &mut [f64]);
}

pub fn rhs_evaluator(physics: Physics, grid: GridSpec) -> Box<dyn PdeRhs + Send> {
    match physics {
        Physics::BurgersScalar { nu } => Box::new(burgers::ScalarRhs::new(grid, nu)),
        Physics::BurgersCoupled { mu } => Box::new(burgers::CoupledRhs::new(grid, mu)),
        Physics::AllenCahn { epsilon } => Box::new(allen_cahn::AllenCahnRhs::new(grid, epsilon)),
        Physics::Swe { gravity, nu } => Box::new(swe::SweRhs::new(grid, gravity, nu)),
    }
}

pub(crate) fn check_blowup(fields: &[f64], limit: f64, time: f64) -> Result<()> {
    let max_abs = fields.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
    if max_abs > limit {
        return Err(GnsError::Instability { time, max_abs });
    }
    Ok(())
}

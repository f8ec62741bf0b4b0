//! Viscous nonlinear shallow-water equations in conservative variables
//! `(eta, eta u, eta v)`, central flux-form differences and RK4.
//!
//! Stored snapshots use primitive channels `(u, v, eta)`.

use super::rk4::{Rk4, SubstepPlan};
use super::{check_blowup, GridSpec, PdeCase, PdeRhs, SolverOptions, Trajectory};
use crate::error::{GnsError, Result};

/// Extra step reduction relative to the RK4 stability limit.
const SWE_ACCURACY: f64 = 0.2;

pub(crate) struct SweRhs {
    grid: GridSpec,
    gravity: f64,
    nu: f64,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl SweRhs {
    pub fn new(grid: GridSpec, gravity: f64, nu: f64) -> Self {
        SweRhs {
            grid,
            gravity,
            nu,
            u: vec![0.0; grid.len()],
            v: vec![0.0; grid.len()],
        }
    }

    /// Conservative state `[h | hu | hv]` to its time derivative.
    fn conservative(&mut self, q: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let n = nx * ny;
        let (h, rest) = q.split_at(n);
        let (hu, hv) = rest.split_at(n);
        for p in 0..n {
            self.u[p] = hu[p] / h[p];
            self.v[p] = hv[p] / h[p];
        }
        let (u, v) = (&self.u, &self.v);
        let g2 = 0.5 * self.gravity;
        let (ix2, iy2) = (0.5 * nx as f64, 0.5 * ny as f64);
        let (idx2, idy2) = ((nx * nx) as f64, (ny * ny) as f64);
        let (dh, rest) = out.split_at_mut(n);
        let (dhu, dhv) = rest.split_at_mut(n);
        for j in 0..ny {
            let jn = (j + 1) % ny;
            let js = (j + ny - 1) % ny;
            for i in 0..nx {
                let ie = (i + 1) % nx;
                let iw = (i + nx - 1) % nx;
                let p = j * nx + i;
                let (e, w) = (j * nx + ie, j * nx + iw);
                let (nn, s) = (jn * nx + i, js * nx + i);

                let fx = |k: usize| (hu[k], hu[k] * u[k] + g2 * h[k] * h[k], hu[k] * v[k]);
                let fy = |k: usize| (hv[k], hv[k] * u[k], hv[k] * v[k] + g2 * h[k] * h[k]);
                let (fe, fw, fn_, fs) = (fx(e), fx(w), fy(nn), fy(s));

                let lap = |f: &[f64]| (f[e] - 2.0 * f[p] + f[w]) * idx2 + (f[nn] - 2.0 * f[p] + f[s]) * idy2;

                dh[p] = -(fe.0 - fw.0) * ix2 - (fn_.0 - fs.0) * iy2;
                dhu[p] = -(fe.1 - fw.1) * ix2 - (fn_.1 - fs.1) * iy2 + self.nu * lap(u);
                dhv[p] = -(fe.2 - fw.2) * ix2 - (fn_.2 - fs.2) * iy2 + self.nu * lap(v);
            }
        }
    }

    fn stable_dt(&self, q: &[f64], cfl: f64) -> f64 {
        let n = self.grid.len();
        let mut speed = 0.0f64;
        for p in 0..n {
            let h = q[p];
            let c = (self.gravity * h.max(0.0)).sqrt();
            speed = speed.max((q[n + p] / h).abs() + c).max((q[2 * n + p] / h).abs() + c);
        }
        let dmin = self.grid.dx().min(self.grid.dy());
        // RK4 on central differences is stable up to |lambda dt| ~ 2.8; the 2-D
        // advective spectral radius is at most 2 * speed / dmin.
        let adv = 2.0 * speed / dmin;
        let diff = self.nu * 4.0 * ((self.grid.nx * self.grid.nx) as f64 + (self.grid.ny * self.grid.ny) as f64);
        let mut dt = f64::INFINITY;
        if adv > 0.0 {
            dt = dt.min(2.8 / adv);
        }
        if diff > 0.0 {
            dt = dt.min(2.7 / diff);
        }
        // Non-dissipative central differences accumulate phase error at the
        // stability limit, so the step is further reduced for accuracy.
        SWE_ACCURACY * cfl * dt
    }
}

impl PdeRhs for SweRhs {
    /// Primitive rates: `u_t = ((hu)_t - u h_t) / h`.
    fn eval(&mut self, state: &[f64], out: &mut [f64]) {
        let n = self.grid.len();
        let f = super::deinterleave(state, 3);
        let mut q = f[2].clone();
        q.extend(f[0].iter().zip(&f[2]).map(|(u, h)| u * h));
        q.extend(f[1].iter().zip(&f[2]).map(|(v, h)| v * h));
        let mut dq = vec![0.0; 3 * n];
        self.conservative(&q, &mut dq);
        for p in 0..n {
            let h = f[2][p];
            out[3 * p] = (dq[n + p] - f[0][p] * dq[p]) / h;
            out[3 * p + 1] = (dq[2 * n + p] - f[1][p] * dq[p]) / h;
            out[3 * p + 2] = dq[p];
        }
    }
}

fn primitive(q: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * n);
    for p in 0..n {
        let h = q[p];
        out.extend([q[n + p] / h, q[2 * n + p] / h, h]);
    }
    out
}

fn check_positive(q: &[f64], n: usize, time: f64) -> Result<()> {
    let min_height = q[..n].iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_height > 0.0) {
        return Err(GnsError::Positivity { time, min_height });
    }
    Ok(())
}

/// Start from rest with height `ic_eta` and integrate to the final snapshot.
pub fn solve_swe(ic_eta: &[f64], grid: GridSpec, gravity: f64, nu: f64, opts: &SolverOptions) -> Result<Trajectory> {
    grid.require_spectral()?;
    let n = grid.len();
    if ic_eta.len() != n {
        return Err(GnsError::dim("swe", "initial height does not match grid"));
    }
    if ic_eta.iter().any(|v| !v.is_finite()) {
        return Err(GnsError::Input("initial height is not finite".into()));
    }
    if !(gravity > 0.0) || !(nu >= 0.0) {
        return Err(GnsError::Config(format!("invalid SWE parameters g={gravity}, nu={nu}")));
    }
    let mut q = ic_eta.to_vec();
    q.resize(3 * n, 0.0);
    check_positive(&q, n, 0.0)?;
    let mut rhs = SweRhs::new(grid, gravity, nu);
    let mut rk = Rk4::new(3 * n);
    let mut plan = SubstepPlan::new(opts.refine);
    let mut fields = Vec::with_capacity(3 * n * opts.time.snapshots);
    fields.extend(primitive(&q, n));
    for s in 1..opts.time.snapshots {
        let n_sub = plan.substeps(opts.time.dt, rhs.stable_dt(&q, opts.cfl));
        let h = opts.time.dt / n_sub as f64;
        let t0 = (s - 1) as f64 * opts.time.dt;
        for k in 0..n_sub {
            rk.step(&mut q, h, |y, out| rhs.conservative(y, out));
            check_positive(&q, n, t0 + (k + 1) as f64 * h)?;
        }
        let prim = primitive(&q, n);
        check_blowup(&prim, opts.blowup, s as f64 * opts.time.dt)?;
        fields.extend(prim);
    }
    Trajectory::new(PdeCase::Swe, n, opts.time.dt, 0, fields)
}

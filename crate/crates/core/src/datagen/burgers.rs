//! Viscous Burgers systems, pseudo-spectral in space and RK4 in time.
//!
//! Quadratic terms are formed in physical space and dealiased with the 2/3
//! rule before being added back in spectral space.

use num_complex::Complex64;

use super::rk4::{Rk4, SubstepPlan};
use super::spectral::Spectral2;
use super::{check_blowup, GridSpec, PdeCase, PdeRhs, SolverOptions, Trajectory};
use crate::error::{GnsError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest |k| per axis and |k|^2 on the lattice.
fn lattice_extent(sp: &Spectral2) -> (f64, f64) {
    let kx = sp.kx_odd.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    let ky = sp.ky_odd.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    let k2 = sp.k2.iter().fold(0.0f64, |m, k| m.max(*k));
    (kx + ky, k2)
}

/// Stable RK4 step for advection speed `speed` and diffusivity `nu`.
fn stable_dt(sp: &Spectral2, speed: f64, nu: f64, cfl: f64) -> f64 {
    let (ksum, k2) = lattice_extent(sp);
    let adv = speed * ksum;
    let diff = nu * k2;
    let mut dt = f64::INFINITY;
    if adv > 0.0 {
        dt = dt.min(2.8 / adv);
    }
    if diff > 0.0 {
        dt = dt.min(2.7 / diff);
    }
    cfl * dt
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(crate) struct ScalarRhs {
    sp: Spectral2,
    nu: f64,
    u: Vec<Complex64>,
    g: Vec<Complex64>,
}

impl ScalarRhs {
    pub fn new(grid: GridSpec, nu: f64) -> Self {
        let n = grid.len();
        ScalarRhs {
            sp: Spectral2::new(grid),
            nu,
            u: vec![ZERO; n],
            g: vec![ZERO; n],
        }
    }

    /// d(uh)/dt for `u_t = -u (u_x + u_y) + nu lap u`.
    fn spectral(&mut self, uh: &[Complex64], out: &mut [Complex64]) {
        let sp = &mut self.sp;
        let nx = sp.nx;
        self.u.copy_from_slice(uh);
        for (p, (g, s)) in self.g.iter_mut().zip(uh).enumerate() {
            *g = s * Complex64::new(0.0, sp.kx_odd[p % nx] + sp.ky_odd[p / nx]);
        }
        sp.inverse(&mut self.u);
        sp.inverse(&mut self.g);
        for (u, g) in self.u.iter_mut().zip(&self.g) {
            *u = Complex64::new(u.re * g.re, 0.0);
        }
        sp.forward(&mut self.u);
        sp.apply_dealias(&mut self.u);
        for (((o, nl), s), k2) in out.iter_mut().zip(&self.u).zip(uh).zip(&sp.k2) {
            *o = -nl - s * (self.nu * k2);
        }
    }
}

impl PdeRhs for ScalarRhs {
    fn eval(&mut self, state: &[f64], out: &mut [f64]) {
        let uh = self.sp.forward_real(state);
        let mut d = vec![ZERO; uh.len()];
        self.spectral(&uh, &mut d);
        self.sp.inverse_real(&d, out);
    }
}

pub(crate) struct CoupledRhs {
    sp: Spectral2,
    mu: f64,
    bufs: [Vec<Complex64>; 6],
}

impl CoupledRhs {
    pub fn new(grid: GridSpec, mu: f64) -> Self {
        let n = grid.len();
        CoupledRhs {
            sp: Spectral2::new(grid),
            mu,
            bufs: std::array::from_fn(|_| vec![ZERO; n]),
        }
    }

    /// State is `[uh | vh]`.
    fn spectral(&mut self, state: &[Complex64], out: &mut [Complex64]) {
        let n = self.sp.len();
        let (uh, vh) = state.split_at(n);
        let [u, v, ux, uy, vx, vy] = &mut self.bufs;
        u.copy_from_slice(uh);
        v.copy_from_slice(vh);
        self.sp.ddx(uh, ux);
        self.sp.ddy(uh, uy);
        self.sp.ddx(vh, vx);
        self.sp.ddy(vh, vy);
        for b in [&mut *u, &mut *v, &mut *ux, &mut *uy, &mut *vx, &mut *vy] {
            self.sp.inverse(b);
        }
        for p in 0..n {
            let (a, b) = (u[p].re, v[p].re);
            let nu_ = a * ux[p].re + b * uy[p].re;
            let nv_ = a * vx[p].re + b * vy[p].re;
            ux[p] = Complex64::new(nu_, 0.0);
            vx[p] = Complex64::new(nv_, 0.0);
        }
        self.sp.forward(ux);
        self.sp.forward(vx);
        self.sp.apply_dealias(ux);
        self.sp.apply_dealias(vx);
        let (ou, ov) = out.split_at_mut(n);
        for p in 0..n {
            let k2 = self.sp.k2[p] * self.mu;
            ou[p] = -ux[p] - uh[p] * k2;
            ov[p] = -vx[p] - vh[p] * k2;
        }
    }
}

impl PdeRhs for CoupledRhs {
    fn eval(&mut self, state: &[f64], out: &mut [f64]) {
        let f = super::deinterleave(state, 2);
        let mut s = self.sp.forward_real(&f[0]);
        s.extend(self.sp.forward_real(&f[1]));
        let mut d = vec![ZERO; s.len()];
        self.spectral(&s, &mut d);
        let n = self.sp.len();
        let mut du = vec![0.0; n];
        let mut dv = vec![0.0; n];
        self.sp.inverse_real(&d[..n], &mut du);
        self.sp.inverse_real(&d[n..], &mut dv);
        out.copy_from_slice(&super::interleave(&[du, dv]));
    }
}

fn check_inputs(grid: GridSpec, fields: &[&[f64]], visc: f64) -> Result<()> {
    grid.require_spectral()?;
    if !(visc > 0.0) {
        return Err(GnsError::Config(format!("viscosity must be positive, got {visc}")));
    }
    for f in fields {
        if f.len() != grid.len() {
            return Err(GnsError::dim("burgers", format!("ic has {} values for {} nodes", f.len(), grid.len())));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(GnsError::Input("initial condition is not finite".into()));
        }
    }
    Ok(())
}

/// `u_t + u u_x + u u_y = nu lap u` on the periodic unit square.
pub fn solve_burgers_scalar(ic: &[f64], grid: GridSpec, nu: f64, opts: &SolverOptions) -> Result<Trajectory> {
    check_inputs(grid, &[ic], nu)?;
    let mut rhs = ScalarRhs::new(grid, nu);
    let mut uh = rhs.sp.forward_real(ic);
    let mut rk = Rk4::new(uh.len());
    let mut plan = SubstepPlan::new(opts.refine);
    let mut fields = Vec::with_capacity(ic.len() * opts.time.snapshots);
    fields.extend_from_slice(ic);
    let mut u = ic.to_vec();
    for s in 1..opts.time.snapshots {
        let dt_max = stable_dt(&rhs.sp, max_abs(&u), nu, opts.cfl);
        let n_sub = plan.substeps(opts.time.dt, dt_max);
        let h = opts.time.dt / n_sub as f64;
        for _ in 0..n_sub {
            rk.step(&mut uh, h, |y, out| rhs.spectral(y, out));
        }
        rhs.sp.inverse_real(&uh, &mut u);
        check_blowup(&u, opts.blowup, s as f64 * opts.time.dt)?;
        fields.extend_from_slice(&u);
    }
    Trajectory::new(PdeCase::BurgersScalar, grid.len(), opts.time.dt, 0, fields)
}

/// `u_t + u u_x + v u_y = mu lap u`, `v_t + u v_x + v v_y = mu lap v`.
pub fn solve_burgers_coupled(
    ic_u: &[f64],
    ic_v: &[f64],
    grid: GridSpec,
    mu: f64,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    check_inputs(grid, &[ic_u, ic_v], mu)?;
    let n = grid.len();
    let mut rhs = CoupledRhs::new(grid, mu);
    let mut state = rhs.sp.forward_real(ic_u);
    state.extend(rhs.sp.forward_real(ic_v));
    let mut rk = Rk4::new(state.len());
    let mut plan = SubstepPlan::new(opts.refine);
    let mut fields = Vec::with_capacity(2 * n * opts.time.snapshots);
    fields.extend(super::interleave(&[ic_u.to_vec(), ic_v.to_vec()]));
    let mut u = ic_u.to_vec();
    let mut v = ic_v.to_vec();
    for s in 1..opts.time.snapshots {
        let speed = max_abs(&u).max(max_abs(&v));
        let dt_max = stable_dt(&rhs.sp, speed, mu, opts.cfl);
        let n_sub = plan.substeps(opts.time.dt, dt_max);
        let h = opts.time.dt / n_sub as f64;
        for _ in 0..n_sub {
            rk.step(&mut state, h, |y, out| rhs.spectral(y, out));
        }
        rhs.sp.inverse_real(&state[..n], &mut u);
        rhs.sp.inverse_real(&state[n..], &mut v);
        let t = s as f64 * opts.time.dt;
        check_blowup(&u, opts.blowup, t)?;
        check_blowup(&v, opts.blowup, t)?;
        fields.extend(super::interleave(&[u.clone(), v.clone()]));
    }
    Trajectory::new(PdeCase::BurgersCoupled, n, opts.time.dt, 0, fields)
}

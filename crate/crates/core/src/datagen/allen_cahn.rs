//! Allen-Cahn `u_t = eps^2 lap u - (u^3 - u)` with ETDRK4 (Cox-Matthews).
//!
//! The linear operator `eps^2 lap` is diagonal in Fourier space. The
//! phi-function coefficients are averaged over a circle of radius 1 around
//! each `h * L` so they stay accurate near `L = 0`.

use std::f64::consts::TAU;

use num_complex::Complex64;

use super::spectral::Spectral2;
use super::{check_blowup, GridSpec, PdeCase, PdeRhs, SolverOptions, Trajectory};
use crate::error::{GnsError, Result};

const CONTOUR_POINTS: usize = 32;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllenCahnOptions {
    /// Include the cubic reaction term; without it the equation is the heat
    /// equation with diffusivity `eps^2`.
    pub reaction: bool,
}

impl Default for AllenCahnOptions {
    fn default() -> Self {
        AllenCahnOptions { reaction: true }
    }
}

/// Per-mode ETDRK4 coefficients for step `h`.
struct EtdCoefficients {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
}

impl EtdCoefficients {
    fn new(linear: &[f64], h: f64) -> Self {
        let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, TAU * (j as f64 + 0.5) / CONTOUR_POINTS as f64))
            .collect();
        let m = CONTOUR_POINTS as f64;
        let len = linear.len();
        let mut c = EtdCoefficients {
            e: Vec::with_capacity(len),
            e2: Vec::with_capacity(len),
            q: Vec::with_capacity(len),
            f1: Vec::with_capacity(len),
            f2: Vec::with_capacity(len),
            f3: Vec::with_capacity(len),
        };
        for &l in linear {
            let hl = h * l;
            c.e.push(hl.exp());
            c.e2.push((hl / 2.0).exp());
            let (mut q, mut f1, mut f2, mut f3) = (ZERO, ZERO, ZERO, ZERO);
            for r in &roots {
                let z = r + hl;
                let ez = z.exp();
                let z3 = z * z * z;
                q += ((z / 2.0).exp() - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            c.q.push(h * (q / m).re);
            c.f1.push(h * (f1 / m).re);
            c.f2.push(h * (f2 / m).re);
            c.f3.push(h * (f3 / m).re);
        }
        c
    }
}

struct Nonlinear {
    sp: Spectral2,
    buf: Vec<Complex64>,
    reaction: bool,
}

impl Nonlinear {
    /// Spectrum of `u - u^3` for spectral state `vh`.
    fn eval(&mut self, vh: &[Complex64], out: &mut [Complex64]) {
        if !self.reaction {
            out.iter_mut().for_each(|o| *o = ZERO);
            return;
        }
        self.buf.copy_from_slice(vh);
        self.sp.inverse(&mut self.buf);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            let u = b.re;
            *o = Complex64::new(u - u * u * u, 0.0);
        }
        self.sp.forward(out);
    }
}

pub fn solve_allen_cahn(ic: &[f64], grid: GridSpec, epsilon: f64, opts: &SolverOptions) -> Result<Trajectory> {
    solve_allen_cahn_with(ic, grid, epsilon, opts, AllenCahnOptions::default())
}

pub fn solve_allen_cahn_with(
    ic: &[f64],
    grid: GridSpec,
    epsilon: f64,
    opts: &SolverOptions,
    ac: AllenCahnOptions,
) -> Result<Trajectory> {
    grid.require_spectral()?;
    if ic.len() != grid.len() {
        return Err(GnsError::dim("allen_cahn", "initial condition does not match grid"));
    }
    if ic.iter().any(|v| !v.is_finite()) {
        return Err(GnsError::Input("initial condition is not finite".into()));
    }
    if !(epsilon > 0.0) {
        return Err(GnsError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = grid.len();
    let mut nl = Nonlinear {
        sp: Spectral2::new(grid),
        buf: vec![ZERO; n],
        reaction: ac.reaction,
    };
    let linear: Vec<f64> = nl.sp.k2.iter().map(|k2| -epsilon * epsilon * k2).collect();
    let steps = opts.etd_steps.max(1) * opts.refine.max(1);
    let h = opts.time.dt / steps as f64;
    let c = EtdCoefficients::new(&linear, h);

    let mut v = nl.sp.forward_real(ic);
    let [mut nv, mut a, mut na, mut b, mut nb, mut cc, mut nc] = std::array::from_fn(|_| vec![ZERO; n]);
    let mut fields = Vec::with_capacity(n * opts.time.snapshots);
    fields.extend_from_slice(ic);
    let mut u = vec![0.0; n];
    for s in 1..opts.time.snapshots {
        for _ in 0..steps {
            nl.eval(&v, &mut nv);
            for p in 0..n {
                a[p] = v[p] * c.e2[p] + nv[p] * c.q[p];
            }
            nl.eval(&a, &mut na);
            for p in 0..n {
                b[p] = v[p] * c.e2[p] + na[p] * c.q[p];
            }
            nl.eval(&b, &mut nb);
            for p in 0..n {
                cc[p] = a[p] * c.e2[p] + (nb[p] * 2.0 - nv[p]) * c.q[p];
            }
            nl.eval(&cc, &mut nc);
            for p in 0..n {
                v[p] = v[p] * c.e[p] + nv[p] * c.f1[p] + (na[p] + nb[p]) * (2.0 * c.f2[p]) + nc[p] * c.f3[p];
            }
        }
        nl.sp.inverse_real(&v, &mut u);
        check_blowup(&u, opts.blowup, s as f64 * opts.time.dt)?;
        fields.extend_from_slice(&u);
    }
    Trajectory::new(PdeCase::AllenCahn, n, opts.time.dt, 0, fields)
}

pub(crate) struct AllenCahnRhs {
    sp: Spectral2,
    epsilon: f64,
}

impl AllenCahnRhs {
    pub fn new(grid: GridSpec, epsilon: f64) -> Self {
        AllenCahnRhs {
            sp: Spectral2::new(grid),
            epsilon,
        }
    }
}

impl PdeRhs for AllenCahnRhs {
    fn eval(&mut self, state: &[f64], out: &mut [f64]) {
        let lap = self.sp.laplacian(state);
        let e2 = self.epsilon * self.epsilon;
        for ((o, &u), l) in out.iter_mut().zip(state).zip(&lap) {
            *o = e2 * l - (u * u * u - u);
        }
    }
}

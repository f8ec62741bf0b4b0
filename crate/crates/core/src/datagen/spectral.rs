//! 2-D periodic FFT plumbing on the unit square.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::GridSpec;

/// Forward/inverse 2-D transforms plus the angular wavenumber lattice of a
/// periodic `nx x ny` grid. Arrays are row-major with `x` fastest.
pub struct Spectral2 {
    pub nx: usize,
    pub ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    /// Signed mode index per x-bin.
    pub mx: Vec<i64>,
    pub my: Vec<i64>,
    /// Angular wavenumber per bin, Nyquist bin zeroed (for odd derivatives).
    pub kx_odd: Vec<f64>,
    pub ky_odd: Vec<f64>,
    /// |k|^2 per 2-D bin, Nyquist kept.
    pub k2: Vec<f64>,
    /// 2/3-rule mask for quadratic products.
    pub dealias: Vec<bool>,
    scratch: Vec<Complex64>,
    column: Vec<Complex64>,
}

fn signed_modes(n: usize) -> Vec<i64> {
    (0..n)
        .map(|i| if i <= n / 2 { i as i64 } else { i as i64 - n as i64 })
        .collect()
}

impl Spectral2 {
    pub fn new(grid: GridSpec) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut planner = FftPlanner::new();
        let mx = signed_modes(nx);
        let my = signed_modes(ny);
        let odd = |m: &[i64], n: usize| -> Vec<f64> {
            m.iter()
                .map(|&k| if n % 2 == 0 && k == (n / 2) as i64 { 0.0 } else { TAU * k as f64 })
                .collect()
        };
        let kx_odd = odd(&mx, nx);
        let ky_odd = odd(&my, ny);
        let mut k2 = vec![0.0; nx * ny];
        let mut dealias = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let (kx, ky) = (TAU * mx[i] as f64, TAU * my[j] as f64);
                k2[j * nx + i] = kx * kx + ky * ky;
                dealias[j * nx + i] = 3 * mx[i].unsigned_abs() < nx as u64 && 3 * my[j].unsigned_abs() < ny as u64;
            }
        }
        Spectral2 {
            nx,
            ny,
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
            mx,
            my,
            kx_odd,
            ky_odd,
            k2,
            dealias,
            scratch: Vec::new(),
            column: vec![Complex64::new(0.0, 0.0); ny],
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let (nx, ny) = (self.nx, self.ny);
        let (fx, fy) = if inverse {
            (self.inv_x.clone(), self.inv_y.clone())
        } else {
            (self.fwd_x.clone(), self.fwd_y.clone())
        };
        let need = fx.get_inplace_scratch_len().max(fy.get_inplace_scratch_len());
        if self.scratch.len() < need {
            self.scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        fx.process_with_scratch(data, &mut self.scratch);
        for i in 0..nx {
            for j in 0..ny {
                self.column[j] = data[j * nx + i];
            }
            fy.process_with_scratch(&mut self.column, &mut self.scratch);
            for j in 0..ny {
                data[j * nx + i] = self.column[j];
            }
        }
    }

    /// Unnormalized forward DFT in place.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    /// Inverse DFT in place, normalized so `inverse(forward(x)) == x`.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.transform(data, true);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    pub fn forward_real(&mut self, field: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform, keeping the real part.
    pub fn inverse_real(&mut self, spec: &[Complex64], out: &mut [f64]) {
        let mut buf = spec.to_vec();
        self.inverse(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.re;
        }
    }

    /// Multiply a spectrum by `i * kx` (x-derivative).
    pub fn ddx(&self, spec: &[Complex64], out: &mut [Complex64]) {
        for j in 0..self.ny {
            for i in 0..self.nx {
                let p = j * self.nx + i;
                out[p] = spec[p] * Complex64::new(0.0, self.kx_odd[i]);
            }
        }
    }

    pub fn ddy(&self, spec: &[Complex64], out: &mut [Complex64]) {
        for j in 0..self.ny {
            let k = Complex64::new(0.0, self.ky_odd[j]);
            for i in 0..self.nx {
                let p = j * self.nx + i;
                out[p] = spec[p] * k;
            }
        }
    }

    /// Physical-space Laplacian of a real field.
    pub fn laplacian(&mut self, field: &[f64]) -> Vec<f64> {
        let mut spec = self.forward_real(field);
        for (s, k2) in spec.iter_mut().zip(&self.k2) {
            *s *= -k2;
        }
        let mut out = vec![0.0; field.len()];
        self.inverse_real(&spec, &mut out);
        out
    }

    /// Physical-space gradient `(f_x, f_y)` of a real field.
    pub fn gradient(&mut self, field: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let spec = self.forward_real(field);
        let mut d = vec![Complex64::new(0.0, 0.0); spec.len()];
        let mut fx = vec![0.0; field.len()];
        let mut fy = vec![0.0; field.len()];
        self.ddx(&spec, &mut d);
        self.inverse_real(&d, &mut fx);
        self.ddy(&spec, &mut d);
        self.inverse_real(&d, &mut fy);
        (fx, fy)
    }

    /// Zero the modes removed by the 2/3 rule.
    pub fn apply_dealias(&self, spec: &mut [Complex64]) {
        for (s, keep) in spec.iter_mut().zip(&self.dealias) {
            if !keep {
                *s = Complex64::new(0.0, 0.0);
            }
        }
    }
}

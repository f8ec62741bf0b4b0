use std::ops::{Add, Mul};

/// Scratch buffers for classical RK4 on a flat state vector.
pub(crate) struct Rk4<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T> Rk4<T>
where
    T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>,
{
    pub fn new(len: usize) -> Self {
        Rk4 {
            k1: vec![T::default(); len],
            k2: vec![T::default(); len],
            k3: vec![T::default(); len],
            k4: vec![T::default(); len],
            tmp: vec![T::default(); len],
        }
    }

    pub fn step(&mut self, y: &mut [T], dt: f64, mut f: impl FnMut(&[T], &mut [T])) {
        let Rk4 { k1, k2, k3, k4, tmp } = self;
        f(y, k1);
        for i in 0..y.len() {
            tmp[i] = y[i] + k1[i] * (0.5 * dt);
        }
        f(tmp, k2);
        for i in 0..y.len() {
            tmp[i] = y[i] + k2[i] * (0.5 * dt);
        }
        f(tmp, k3);
        for i in 0..y.len() {
            tmp[i] = y[i] + k3[i] * dt;
        }
        f(tmp, k4);
        for i in 0..y.len() {
            y[i] = y[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
        }
    }
}

/// Drives an explicit integrator between snapshots, choosing a uniform
/// substep per interval from a stability-limited step size.
///
/// The substep count never decreases over a run, so refined runs
/// (`refine > 1`) subdivide the same base steps.
pub(crate) struct SubstepPlan {
    base: usize,
    refine: usize,
}

impl SubstepPlan {
    pub fn new(refine: usize) -> Self {
        SubstepPlan {
            base: 1,
            refine: refine.max(1),
        }
    }

    /// Substeps for an interval of length `interval` given the current
    /// stable step `dt_max`.
    pub fn substeps(&mut self, interval: f64, dt_max: f64) -> usize {
        let need = if dt_max.is_finite() && dt_max > 0.0 {
            (interval / dt_max).ceil() as usize
        } else {
            1
        };
        self.base = self.base.max(need.max(1));
        self.base * self.refine
    }
}

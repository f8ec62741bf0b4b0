//! Periodic stationary Gaussian random fields sampled spectrally.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spectral::Spectral2;
use super::GridSpec;
use crate::error::{GnsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Matérn covariance with the given smoothness.
    Matern { smoothness: f64 },
    SquaredExponential,
}

pub const DEFAULT_MATERN_SMOOTHNESS: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfSpec {
    pub kernel: Kernel,
    pub length_scale: f64,
    /// Target pointwise standard deviation.
    pub sigma: f64,
    /// Min-max rescale the sample to this range instead of using `sigma`.
    #[serde(default)]
    pub normalize_to: Option<[f64; 2]>,
    #[serde(default)]
    pub seed: u64,
}

impl GrfSpec {
    pub fn matern(length_scale: f64, sigma: f64) -> Self {
        GrfSpec {
            kernel: Kernel::Matern {
                smoothness: DEFAULT_MATERN_SMOOTHNESS,
            },
            length_scale,
            sigma,
            normalize_to: None,
            seed: 0,
        }
    }

    pub fn squared_exponential(length_scale: f64, sigma: f64) -> Self {
        GrfSpec {
            kernel: Kernel::SquaredExponential,
            ..GrfSpec::matern(length_scale, sigma)
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        GrfSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0) {
            return Err(GnsError::Config(format!("GRF length scale must be positive, got {}", self.length_scale)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(GnsError::Config(format!("GRF sigma must be finite and non-negative, got {}", self.sigma)));
        }
        if let Kernel::Matern { smoothness } = self.kernel {
            if !(smoothness > 0.0) {
                return Err(GnsError::Config("Matérn smoothness must be positive".into()));
            }
        }
        if let Some([lo, hi]) = self.normalize_to {
            if !(hi > lo) {
                return Err(GnsError::Config(format!("normalization range [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    /// Unnormalized 2-D spectral density at angular wavenumber magnitude² `k2`.
    pub fn spectral_density(&self, k2: f64) -> f64 {
        let l = self.length_scale;
        match self.kernel {
            Kernel::Matern { smoothness } => (2.0 * smoothness / (l * l) + k2).powf(-(smoothness + 1.0)),
            Kernel::SquaredExponential => (-0.5 * l * l * k2).exp(),
        }
    }
}

/// One sample with the spec's own seed.
pub fn sample_grf(grid: GridSpec, spec: &GrfSpec) -> Vec<f64> {
    sample_grf_many(grid, spec, 1).pop().unwrap_or_default()
}

/// `count` independent samples drawn in sequence from the spec's seed.
pub fn sample_grf_many(grid: GridSpec, spec: &GrfSpec, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sp = Spectral2::new(grid);
    let amp: Vec<f64> = sp.k2.iter().map(|&k2| spec.spectral_density(k2).sqrt()).collect();
    // Var(Re sum_k a_k xi_k e^{ikx}) = sum_k a_k^2 / 2 for xi ~ CN(0, 1).
    let total: f64 = amp.iter().map(|a| a * a).sum::<f64>() / 2.0;
    let n = grid.len() as f64;
    (0..count)
        .map(|_| {
            let mut spec_buf: Vec<Complex64> = amp
                .iter()
                .map(|&a| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(re, im) * (a * std::f64::consts::FRAC_1_SQRT_2)
                })
                .collect();
            sp.inverse(&mut spec_buf);
            let mut field: Vec<f64> = spec_buf.iter().map(|c| c.re * n).collect();
            match spec.normalize_to {
                Some([lo, hi]) => {
                    let min = field.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let span = (max - min).max(f64::MIN_POSITIVE);
                    field.iter_mut().for_each(|v| *v = lo + (*v - min) / span * (hi - lo));
                }
                None => {
                    let s = if total > 0.0 { spec.sigma / total.sqrt() } else { 0.0 };
                    field.iter_mut().for_each(|v| *v *= s);
                }
            }
            field
        })
        .collect()
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GnsError>;

/// Every failure the library can report.
///
/// Variants are grouped by the exit-code class the command-line front end maps
/// them to: configuration errors, input-validation errors and numerical
/// divergence.
#[derive(Debug, Error)]
pub enum GnsError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index {index} out of range for {len} rows in {op}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("layer norm needs at least 2 features per row, got {0}")]
    DegenerateNormalization(usize),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("solver blew up at t = {time:.6} (max |u| = {max_abs:.3e})")]
    Instability { time: f64, max_abs: f64 },

    #[error("water height became non-positive at t = {time:.6} (min = {min_height:.3e})")]
    Positivity { time: f64, min_height: f64 },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<GnsError>,
    },

    #[error("grid {nx}x{ny} is too small for the 8-neighbour stencil")]
    StencilDegenerate { nx: usize, ny: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    TrainingDivergence { epoch: usize, loss: f64 },

    #[error("rollout diverged at step {step}")]
    RolloutDivergence { step: usize },

    #[error("relative L2 undefined: reference norm is zero")]
    UndefinedMetric,

    #[error("checksum mismatch in {path}: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum {
        path: PathBuf,
        stored: u64,
        computed: u64,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("refusing to overwrite existing {0} (pass --overwrite)")]
    Exists(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GnsError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        GnsError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GnsError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        match self {
            GnsError::Instability { .. }
            | GnsError::Positivity { .. }
            | GnsError::NonFinite(_)
            | GnsError::TrainingDivergence { .. }
            | GnsError::RolloutDivergence { .. } => true,
            GnsError::Sample { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    /// True for usage and configuration mistakes.
    pub fn is_config(&self) -> bool {
        matches!(self, GnsError::Config(_) | GnsError::Exists(_))
    }
}

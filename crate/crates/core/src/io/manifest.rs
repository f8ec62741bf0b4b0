//! TOML manifest recording which trajectories were selected for training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::PdeCase;
use crate::error::{GnsError, Result};
use crate::selection::{Representative, Selection, SelectionConfig};

use super::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionManifest {
    pub case: PdeCase,
    /// Trajectories in the dataset the selection was made from.
    pub n_samples: usize,
    /// Selected ids, ascending.
    pub ids: Vec<usize>,
    pub n_components_used: usize,
    pub inertia: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub config: SelectionConfig,
    /// Per-cluster representative and its distance to the centroid.
    pub clusters: Vec<Representative>,
}

impl SelectionManifest {
    pub fn new(case: PdeCase, n_samples: usize, config: SelectionConfig, selection: Selection) -> Self {
        SelectionManifest {
            case,
            n_samples,
            ids: selection.ids,
            n_components_used: selection.n_components_used,
            inertia: selection.inertia,
            warnings: selection.warnings,
            config,
            clusters: selection.representatives,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes to TOML")
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let m: SelectionManifest = toml::from_str(text).map_err(|e| GnsError::Format {
            path: path.to_path_buf(),
            detail: e.message().to_string(),
        })?;
        let sorted = m.ids.windows(2).all(|w| w[0] < w[1]);
        if !sorted || m.ids.last().is_some_and(|&i| i >= m.n_samples) {
            return Err(GnsError::Format {
                path: path.to_path_buf(),
                detail: "selected ids must be distinct, ascending and within the dataset".into(),
            });
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path, overwrite: bool) -> Result<()> {
        write_atomic(path, self.to_toml().as_bytes(), overwrite)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GnsError::io(path, e))?;
        Self::from_toml(&text, path)
    }
}

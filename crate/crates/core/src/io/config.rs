//! TOML run configuration.
//!
//! Only `case` is required. Every other key defaults to the standard
//! setting for that case; unknown keys are rejected. Overrides given as
//! dotted `key=value` pairs are applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::datagen::{CaseSpec, PdeCase};
use crate::error::{GnsError, Result};
use crate::model::GnsConfig;
use crate::selection::SelectionConfig;
use crate::training::TrainConfig;

/// Which trajectories the evaluation rolls out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSet {
    /// Every trajectory not selected for training.
    HeldOut,
    /// Every trajectory in the dataset.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory receiving every artifact of the run.
    pub out_dir: PathBuf,
}

impl Paths {
    pub fn dataset(&self) -> PathBuf {
        self.out_dir.join("dataset.gnsd")
    }
    pub fn selection(&self) -> PathBuf {
        self.out_dir.join("selection.toml")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.out_dir.join("model.gnsc")
    }
    pub fn loss_csv(&self) -> PathBuf {
        self.out_dir.join("loss.csv")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }
    pub fn figures_dir(&self) -> PathBuf {
        self.out_dir.join("figures")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: PdeCase,
    /// Number of trajectories to generate.
    pub n_samples: usize,
    /// Sample `i` uses initial-condition seed `data_seed + i`.
    pub data_seed: u64,
    pub test_set: TestSet,
    /// Keep at most this many test trajectories (lowest ids first).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_test: Option<usize>,
    pub data: CaseSpec,
    pub selection: SelectionConfig,
    pub model: GnsConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    /// Standard settings: dataset sizes, grids and kernels, 30 selected
    /// trajectories (50 for shallow water), per-case architecture.
    pub fn for_case(case: PdeCase) -> Self {
        let (n_samples, n_select) = match case {
            PdeCase::BurgersScalar | PdeCase::AllenCahn => (1000, 30),
            PdeCase::BurgersCoupled => (500, 30),
            PdeCase::Swe => (500, 50),
        };
        RunConfig {
            case,
            n_samples,
            data_seed: 0,
            test_set: TestSet::HeldOut,
            max_test: None,
            data: CaseSpec::standard(case),
            selection: SelectionConfig::for_case(case, n_select),
            model: GnsConfig::for_case(case),
            train: TrainConfig::for_case(case),
            paths: Paths {
                out_dir: PathBuf::from("runs").join(case.name()),
            },
        }
    }

    /// Parse TOML text, fill defaults from `case` and apply `key=value`
    /// overrides (dotted keys, TOML values; bare words become strings).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user: Table = text.parse().map_err(|e| GnsError::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let case: PdeCase = match user.get("case") {
            Some(Value::String(s)) => s.parse()?,
            Some(v) => return Err(GnsError::Config(format!("case must be a string, got {v}"))),
            None => return Err(GnsError::Config("config must name a `case`".into())),
        };
        let defaults = Table::try_from(RunConfig::for_case(case)).expect("defaults serialize");
        let mut merged = defaults;
        merge(&mut merged, user);
        let cfg: RunConfig = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| GnsError::Config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GnsError::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    /// Fully resolved configuration, suitable as a provenance snapshot.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GnsError::Config(m));
        if self.data.case() != self.case {
            return bad(format!("physics is for {}, case is {}", self.data.case(), self.case));
        }
        if self.model.out_channels != self.case.channels() {
            return bad(format!("model predicts {} channels, {} has {}", self.model.out_channels, self.case, self.case.channels()));
        }
        if self.n_samples < 2 {
            return bad("need at least two samples".into());
        }
        if self.selection.n_select == 0 || self.selection.n_select > self.n_samples {
            return bad(format!("cannot select {} of {} samples", self.selection.n_select, self.n_samples));
        }
        if self.selection.n_components == 0 {
            return bad("selection needs at least one principal component".into());
        }
        if self.max_test == Some(0) {
            return bad("max_test must be positive".into());
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Evaluation ids given the training selection.
    pub fn test_ids(&self, n_samples: usize, selected: &[usize]) -> Vec<usize> {
        let ids = (0..n_samples).filter(|i| self.test_set == TestSet::All || !selected.contains(i));
        ids.take(self.max_test.unwrap_or(usize::MAX)).collect()
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| GnsError::Config(format!("override `{spec}` is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| GnsError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

//! Run configuration files.
//!
//! ```json
//! {
//!   "dataset": {
//!     "path": "california_housing.csv",
//!     "schema": { "target": "median_house_value", "features": ["median_income"],
//!                 "latitude": "latitude", "longitude": "longitude" },
//!     "fractions": [0.8, 0.1, 0.1],
//!     "seed": 0
//!   },
//!   "model": { "approach": "PEGQNN_FULL", "layer_kind": "GCN" },
//!   "train": { "batch_size": 64, "max_epochs": 300 },
//!   "eval": { "split": "test" }
//! }
//! ```
//!
//! `dataset.synthetic` replaces `path`/`schema` with a generated field.
//! Relative paths are resolved against the directory holding the config.

use std::path::{Path, PathBuf};

use pegqnn_core::data::{synth_gaussian_field, SynthParams};
use pegqnn_core::metrics::{self, DEFAULT_EVAL_SEED, DEFAULT_GOLD_LEVEL};
use pegqnn_core::training::EvalOptions;
use pegqnn_core::{load_csv, CsvSchema, ModelSpec, SpatialDataset, Split, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: SynthParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<CsvSchema>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    /// Seed of the train/validation/test split.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Val,
    #[default]
    Test,
}

impl From<EvalSplit> for Split {
    fn from(s: EvalSplit) -> Self {
        match s {
            EvalSplit::Train => Split::Train,
            EvalSplit::Val => Split::Val,
            EvalSplit::Test => Split::Test,
        }
    }
}

fn default_gold_level() -> f64 {
    DEFAULT_GOLD_LEVEL
}
fn default_eval_seed() -> u64 {
    DEFAULT_EVAL_SEED
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Levels of the reliability curve; the 99-point grid when absent.
    #[serde(default)]
    pub taus: Option<Vec<f64>>,
    #[serde(default)]
    pub split: EvalSplit,
    #[serde(default = "default_gold_level")]
    pub gold_level: f64,
    /// Seed of the τ draws behind MPE.
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            taus: None,
            split: EvalSplit::Test,
            gold_level: DEFAULT_GOLD_LEVEL,
            seed: DEFAULT_EVAL_SEED,
        }
    }
}

impl EvalConfig {
    pub fn grid(&self) -> Vec<f64> {
        self.taus.clone().unwrap_or_else(metrics::tau_grid_99)
    }

    pub fn options(&self, chunk_size: usize) -> EvalOptions {
        EvalOptions {
            grid: self.grid(),
            seed: self.seed,
            gold_level: self.gold_level,
            chunk_size,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            CliError::usage(format!("{}: field `{field}`: {}", path.display(), e.inner()))
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// `--seed` replaces the model and training seeds; the split seed stays.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.model.seed = s;
            self.train.seed = s;
        }
    }

    /// Checks everything that can be checked before any data is read.
    pub fn validate(&self, data_override: Option<&Path>) -> Result<(), CliError> {
        let d = &self.dataset;
        match (&d.synthetic, data_override.or(d.path.as_deref())) {
            (Some(_), Some(_)) if data_override.is_none() => {
                return Err(CliError::usage("dataset: set either `path` or `synthetic`, not both"))
            }
            (None, None) => {
                return Err(CliError::usage(
                    "dataset.path: missing (give a CSV path, `dataset.synthetic`, or --data)",
                ))
            }
            _ => {}
        }
        if self.dataset_source(data_override).is_csv() {
            let path = self.resolved_path(data_override).expect("checked above");
            if !path.is_file() {
                return Err(CliError::usage(format!(
                    "dataset.path: file {} does not exist",
                    path.display()
                )));
            }
            if d.schema.is_none() {
                return Err(CliError::usage("dataset.schema: required for CSV datasets"));
            }
        }
        let [a, b, c] = d.fractions;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(CliError::usage(format!(
                "dataset.fractions: {:?} must lie in [0, 1] and sum to 1",
                d.fractions
            )));
        }
        self.model
            .validate()
            .map_err(|e| CliError::usage(format!("model: {e}")))?;
        self.train
            .validate()
            .map_err(|e| CliError::usage(format!("train: {e}")))?;
        if let Some(t) = &self.eval.taus {
            validate_taus(t).map_err(|e| CliError::usage(format!("eval.taus: {e}")))?;
        }
        if !(self.eval.gold_level > 0.0 && self.eval.gold_level < 1.0) {
            return Err(CliError::usage(format!(
                "eval.gold_level: {} not in (0, 1)",
                self.eval.gold_level
            )));
        }
        Ok(())
    }

    fn dataset_source(&self, data_override: Option<&Path>) -> Source {
        if data_override.is_some() || self.dataset.synthetic.is_none() {
            Source::Csv
        } else {
            Source::Synthetic
        }
    }

    fn resolved_path(&self, data_override: Option<&Path>) -> Option<PathBuf> {
        if let Some(p) = data_override {
            return Some(p.to_path_buf());
        }
        self.dataset.path.as_ref().map(|p| {
            if p.is_absolute() {
                p.clone()
            } else {
                self.base_dir.join(p)
            }
        })
    }

    /// Raw (unsplit, unnormalized) dataset.
    pub fn load_raw(&self, data_override: Option<&Path>) -> Result<SpatialDataset, CliError> {
        match self.dataset_source(data_override) {
            Source::Csv => {
                let path = self.resolved_path(data_override).expect("validated");
                let schema = self.dataset.schema.as_ref().expect("validated");
                load_csv(&path, schema).map_err(|e| match e {
                    pegqnn_core::Error::Io(_) | pegqnn_core::Error::Csv(_) => CliError::runtime(e),
                    other => CliError::usage(format!("dataset {}: {other}", path.display())),
                })
            }
            Source::Synthetic => {
                let s = self.dataset.synthetic.as_ref().expect("synthetic source");
                synth_gaussian_field(s.n, s.seed, &s.params)
                    .map(|f| f.dataset)
                    .map_err(|e| CliError::usage(format!("dataset.synthetic: {e}")))
            }
        }
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.dataset.fractions;
        (a, b, c)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Source {
    Csv,
    Synthetic,
}

impl Source {
    fn is_csv(self) -> bool {
        self == Source::Csv
    }
}

pub fn validate_taus(taus: &[f64]) -> Result<(), String> {
    if taus.is_empty() {
        return Err("no quantile levels given".into());
    }
    match taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        Some(t) => Err(format!("τ = {t} not in (0, 1)")),
        None => Ok(()),
    }
}

/// Parses `0.1,0.5,0.9`.
pub fn parse_taus(s: &str) -> Result<Vec<f64>, String> {
    let taus = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("cannot parse τ {:?}", t.trim()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    validate_taus(&taus)?;
    Ok(taus)
}

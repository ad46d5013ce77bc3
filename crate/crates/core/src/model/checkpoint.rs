//! Checkpoint files: a versioned JSON document holding the model spec, the
//! raw feature count and every parameter tensor by name.
//!
//! ```json
//! {
//!   "format": "pegqnn-checkpoint",
//!   "version": 1,
//!   "spec": { "approach": "PEGQNN_FULL", ... },
//!   "num_features": 6,
//!   "params": [ { "name": "graph1.weight", "rows": 38, "cols": 32, "values": [...] }, ... ],
//!   "val_mse": 0.0123,
//!   "normalization": { ... }
//! }
//! ```
//!
//! Loading rebuilds the model from `spec` and then overwrites every tensor,
//! so names, order and shapes must match exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::autodiff::{ParamStore, Tensor};
use crate::data::Normalization;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "pegqnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub num_features: usize,
    pub params: Vec<NamedTensor>,
    /// Validation MSE of the point predictions; drives the Gaussian
    /// predictive baseline for MSE-trained approaches.
    #[serde(default)]
    pub val_mse: Option<f64>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, val_mse: Option<f64>, normalization: Option<Normalization>) -> Self {
        let params = model
            .params()
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                values: p.value.data().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            spec: model.spec().clone(),
            num_features: model.num_features(),
            params,
            val_mse,
            normalization,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "not a checkpoint (format `{}`)",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = Model::new(self.spec.clone(), self.num_features)?;
        let mut stored = ParamStore::new();
        for t in &self.params {
            stored.add(t.name.clone(), Tensor::new(t.rows, t.cols, t.values.clone())?);
        }
        model.params_mut().load_values(&stored)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}

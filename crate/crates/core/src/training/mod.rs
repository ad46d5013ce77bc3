//! Losses, the Adam optimizer and the batched training loop.
//!
//! Each step samples a batch of training rows, builds the k-NN graph over
//! the batch alone, runs the model and updates every parameter. Validation
//! loss is recorded once per epoch and the best parameters are restored
//! when training stops.

mod adam;
mod eval;
mod loss;

pub use adam::{Adam, AdamConfig};
pub use eval::{evaluate, EvalOptions, EvalSet};
pub use loss::{morans_i, mse_loss, pegnn_head_loss, pegnn_loss, pinball_loss};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{SpatialDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{self, QuantilePredictor};
use crate::model::{Approach, Model, ModelInputs, ModelSpec};
use crate::spatial::{build_knn_graph, neighbor_target_mean, training_neighbor_mean};
use crate::SeededRng;

/// Source of the neighbour target mean ȳ during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YbarMode {
    /// Mean target of the k nearest training rows in the whole training set.
    #[default]
    Global,
    /// Mean target of the k nearest rows within the batch graph.
    Batch,
}

fn default_batch_size() -> usize {
    256
}
fn default_max_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    20
}
fn default_d() -> usize {
    1
}
fn default_tau_eps() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Hard cap on optimizer steps across all epochs.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Epochs without a validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// τ draws per row and step.
    #[serde(default = "default_d")]
    pub d: usize,
    /// τ is drawn from `U(tau_eps, 1 − tau_eps)`.
    #[serde(default = "default_tau_eps")]
    pub tau_eps: f64,
    #[serde(default)]
    pub ybar_mode: YbarMode,
    /// Rows per graph at evaluation time; defaults to the batch size.
    #[serde(default)]
    pub eval_chunk: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            max_steps: None,
            adam: AdamConfig::default(),
            patience: default_patience(),
            d: default_d(),
            tau_eps: default_tau_eps(),
            ybar_mode: YbarMode::Global,
            eval_chunk: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.patience < 1 || self.d < 1 || self.max_epochs < 1 {
            return Err(Error::Config("patience, d and max_epochs must be >= 1".into()));
        }
        if !(self.tau_eps > 0.0 && self.tau_eps < 0.5) {
            return Err(Error::Config(format!("tau_eps {} not in (0, 0.5)", self.tau_eps)));
        }
        self.adam.validate()
    }

    pub fn eval_chunk(&self) -> usize {
        self.eval_chunk.unwrap_or(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(rename = "val_MSE")]
    pub val_mse: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// Columns `epoch, train_loss, val_loss, val_MSE, wall_seconds`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model holding the best-validation parameters.
    pub model: Model,
    pub history: History,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation MSE of the kept parameters.
    pub val_mse: f64,
    pub steps: usize,
    /// ȳ for every dataset row, as used in validation.
    pub ybar: Vec<f64>,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

/// ȳ for every row from the k nearest training rows (never the row itself).
pub fn global_ybar(ds: &SpatialDataset, k: usize) -> Result<Vec<f64>> {
    training_neighbor_mean(&ds.coords, &ds.y, &ds.train_mask(), k)
}

/// Draws `d` vectors of `n` levels from `U(eps, 1 − eps)`.
pub fn sample_taus(rng: &mut SeededRng, n: usize, d: usize, eps: f64) -> Vec<Vec<f64>> {
    (0..d)
        .map(|_| (0..n).map(|_| rng.random_range(eps..1.0 - eps)).collect())
        .collect()
}

/// Pinball loss averaged over several τ draws that share one trunk pass.
pub fn quantile_batch_loss(
    tape: &mut Tape,
    model: &Model,
    inputs: &ModelInputs<'_>,
    y: &[f64],
    tau_draws: &[Vec<f64>],
    rng: Option<&mut SeededRng>,
) -> Result<Var> {
    if tau_draws.is_empty() {
        return Err(Error::Config("need at least one τ draw".into()));
    }
    let trunk = model.trunk(tape, inputs, rng)?;
    let yv = tape.constant(Tensor::column(y));
    let mut total: Option<Var> = None;
    for taus in tau_draws {
        let q = model.quantile_head(tape, &trunk, taus)?;
        let t = tape.constant(Tensor::column(taus));
        let l = pinball_loss(tape, yv, q, t)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let total = total.expect("at least one draw");
    Ok(tape.scale(total, 1.0 / tau_draws.len() as f64))
}

/// Loss of one batch for whichever approach `model` implements.
fn batch_loss(
    tape: &mut Tape,
    model: &Model,
    inputs: &ModelInputs<'_>,
    y: &[f64],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<Var> {
    match model.approach() {
        a if a.is_quantile() => {
            let taus = sample_taus(rng, y.len(), cfg.d, cfg.tau_eps);
            quantile_batch_loss(tape, model, inputs, y, &taus, Some(rng))
        }
        Approach::PeGnn => {
            let out = model.forward_pegnn(tape, inputs, Some(rng))?;
            let yv = tape.constant(Tensor::column(y));
            let moran = out
                .morans_prediction
                .ok_or_else(|| Error::Contract("PE-GNN without a Moran head".into()))?;
            let w = inputs.graph.row_standardized();
            pegnn_head_loss(tape, yv, out.prediction, moran, &w, model.spec().lambda_or_default())
        }
        _ => {
            let out = model.forward_gnn(tape, inputs, Some(rng))?;
            let yv = tape.constant(Tensor::column(y));
            mse_loss(tape, yv, out.prediction)
        }
    }
}

/// Validation loss (pinball at fixed τ draws for quantile approaches, MSE
/// otherwise) and validation MSE of the point predictions.
fn validation(model: &Model, ds: &SpatialDataset, rows: &[usize], ybar: &[f64], chunk: usize) -> Result<(f64, f64)> {
    let set = EvalSet::new(model, ds, rows, ybar, chunk)?;
    let y: Vec<f64> = set.rows().iter().map(|&i| ds.y[i]).collect();
    let point = set.point_predictions()?;
    let mse = metrics::mse(&y, &point)?;
    let loss = if model.approach().is_quantile() {
        metrics::mpe(&y, &set as &dyn QuantilePredictor, metrics::DEFAULT_EVAL_SEED)?
    } else {
        mse
    };
    Ok((loss, mse))
}

/// Builds a model from `spec` and trains it on the dataset's training split.
pub fn train(ds: &SpatialDataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = Model::new(spec.clone(), ds.num_features())?;
    train_model(model, ds, cfg)
}

/// Trains an existing model in place of a freshly initialized one.
pub fn train_model(mut model: Model, ds: &SpatialDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = model.spec().k;
    let train_rows = ds.indices(Split::Train);
    let val_rows = ds.indices(Split::Val);
    if train_rows.len() <= k || val_rows.len() <= k {
        return Err(Error::Config(format!(
            "need more than k = {k} training and validation rows (have {} and {})",
            train_rows.len(),
            val_rows.len()
        )));
    }
    let batch_size = cfg.batch_size.min(train_rows.len());
    if batch_size <= k {
        return Err(Error::Config(format!("batch_size {batch_size} must exceed k = {k}")));
    }

    let ybar = global_ybar(ds, k)?;
    let coords_all = ds.normalized_coords();
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, model.params());
    let mut history = History::default();
    let mut best = (f64::INFINITY, 0usize, f64::NAN, model.params().clone());
    let mut since_best = 0;
    let mut step = 0usize;
    let start = Instant::now();

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut order = train_rows.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (s, e) in eval::chunk_bounds(order.len(), batch_size, k + 1) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let idx = &order[s..e];
            let graph = build_knn_graph(&ds.coords.select(idx), k)?;
            let features = ds.x.select_rows(idx);
            let coords = coords_all.select_rows(idx);
            let y: Vec<f64> = idx.iter().map(|&i| ds.y[i]).collect();
            let batch_ybar: Vec<f64> = match cfg.ybar_mode {
                YbarMode::Global => idx.iter().map(|&i| ybar[i]).collect(),
                YbarMode::Batch => {
                    let fallback = y.iter().sum::<f64>() / y.len() as f64;
                    neighbor_target_mean(&graph, &y, &vec![true; y.len()], fallback)?
                }
            };
            let inputs = ModelInputs {
                features: &features,
                coords: &coords,
                graph: &graph,
                ybar: model.approach().uses_ybar().then_some(batch_ybar.as_slice()),
            };
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, &model, &inputs, &y, cfg, &mut rng)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            tape.backward(loss)?;
            model.params_mut().zero_grad();
            tape.accumulate_param_grads(model.params_mut());
            adam.step(model.params_mut())?;
            loss_sum += value;
            batches += 1;
            step += 1;
        }
        if batches == 0 {
            break 'epochs;
        }
        let (val_loss, val_mse) = validation(&model, ds, &val_rows, &ybar, cfg.eval_chunk())?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_mse,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train {:.6} val {val_loss:.6}", loss_sum / batches as f64);
        if val_loss < best.0 {
            best = (val_loss, epoch, val_mse, model.params().clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop after epoch {epoch}; best epoch {}", best.1);
                break;
            }
        }
        if !val_loss.is_finite() {
            return Err(Error::Divergence { step, loss: val_loss });
        }
    }
    if history.is_empty() {
        return Err(Error::Config("training ran no steps".into()));
    }
    let (best_val_loss, best_epoch, val_mse, params) = best;
    model.params_mut().load_values(&params)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_loss,
        val_mse,
        steps: step,
        ybar,
    })
}

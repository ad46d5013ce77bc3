use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use pegqnn_core::metrics::{crossing_audit_matrix, CrossingAudit, GaussianPredictor, QuantilePredictor};
use pegqnn_core::training::{evaluate, global_ybar, EvalSet};
use pegqnn_core::{
    apply_normalization, assign_split, fit_normalization, Approach, CalibrationReport, Checkpoint,
    GraphLayerKind, Model, SpatialDataset, Split,
};
use serde::Serialize;

use crate::config::{parse_taus, validate_taus, RunConfig};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const ECP_FILE: &str = "ecp.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const BENCHMARK_FAILURES_FILE: &str = "benchmark_failures.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::usage(format!("--out-dir {}: {e}", dir.display())))
}

fn load_config(path: &Path, data: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    cfg.override_seed(seed);
    cfg.validate(data)?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!(
            "--checkpoint: file {} does not exist",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?)
}

/// Splits and normalizes the configured data, reusing a stored
/// normalization when one is given.
fn prepare(cfg: &RunConfig, data: Option<&Path>, stored: Option<&pegqnn_core::Normalization>) -> Result<SpatialDataset, CliError> {
    let raw = cfg.load_raw(data)?;
    let ds = assign_split(raw, cfg.fractions(), cfg.dataset.seed)
        .map_err(|e| CliError::usage(format!("dataset.fractions: {e}")))?;
    let norm = match stored {
        Some(n) => n.clone(),
        None => fit_normalization(&ds),
    };
    apply_normalization(ds, norm).map_err(|e| CliError::runtime(anyhow::anyhow!("spec/checkpoint mismatch: {e}")))
}

#[derive(Debug, Serialize)]
struct Metadata {
    created_unix_seconds: u64,
    tool_version: &'static str,
}

impl Metadata {
    fn now() -> Self {
        Self {
            created_unix_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            tool_version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Serialize)]
struct Metrics {
    n: usize,
    mse: f64,
    mae: f64,
    mpe: f64,
    madecp: f64,
    crossings: CrossingAudit,
    gold_level: f64,
    inside_band: usize,
}

impl From<&CalibrationReport> for Metrics {
    fn from(r: &CalibrationReport) -> Self {
        Self {
            n: r.n,
            mse: r.mse,
            mae: r.mae,
            mpe: r.mpe,
            madecp: r.madecp,
            crossings: r.crossings,
            gold_level: r.gold_level,
            inside_band: r.inside_band,
        }
    }
}

/// Everything but `metadata` is a pure function of config and seed.
#[derive(Debug, Serialize)]
struct Summary {
    metadata: Metadata,
    model: String,
    approach: Approach,
    layer_kind: GraphLayerKind,
    parameters: usize,
    epochs_run: usize,
    best_epoch: usize,
    steps: usize,
    best_val_loss: f64,
    validation: Metrics,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    fs::write(path, text + "\n").map_err(CliError::runtime)
}

struct TrainedRun {
    model_name: String,
    epochs: usize,
    parameters: usize,
    model: Model,
    val_mse: f64,
    ybar: Vec<f64>,
    ds: SpatialDataset,
}

fn train_into(cfg: &RunConfig, data: Option<&Path>, out_dir: &Path) -> Result<TrainedRun, CliError> {
    create_dir(out_dir)?;
    let ds = prepare(cfg, data, None)?;
    let outcome = pegqnn_core::train(&ds, &cfg.model, &cfg.train)?;
    let model = &outcome.model;
    let val_rows = ds.indices(Split::Val);
    let report = evaluate(
        model,
        &ds,
        &val_rows,
        &outcome.ybar,
        Some(outcome.val_mse),
        &cfg.eval.options(cfg.train.eval_chunk()),
    )?;

    Checkpoint::from_model(model, Some(outcome.val_mse), ds.normalization.clone())
        .save(out_dir.join(CHECKPOINT_FILE))?;
    outcome.history.write_csv(out_dir.join(HISTORY_FILE))?;
    let model_name = cfg.model.approach.model_name(cfg.model.layer_kind);
    let summary = Summary {
        metadata: Metadata::now(),
        model: model_name.clone(),
        approach: cfg.model.approach,
        layer_kind: cfg.model.layer_kind,
        parameters: model.parameter_count(),
        epochs_run: outcome.epochs_run(),
        best_epoch: outcome.best_epoch,
        steps: outcome.steps,
        best_val_loss: outcome.best_val_loss,
        validation: Metrics::from(&report),
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    log::info!(
        "{model_name}: {} epochs, validation MSE {:.5}, MPE {:.5}, MADECP {:.4}",
        summary.epochs_run,
        report.mse,
        report.mpe,
        report.madecp
    );
    Ok(TrainedRun {
        model_name,
        epochs: summary.epochs_run,
        parameters: summary.parameters,
        val_mse: outcome.val_mse,
        ybar: outcome.ybar,
        model: outcome.model,
        ds,
    })
}

pub fn train(config: &Path, data: Option<&Path>, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = load_config(config, data, seed)?;
    train_into(&cfg, data, out_dir).map(|_| ())
}

/// Model, data and ȳ ready for inference from a checkpoint.
struct Loaded {
    model: Model,
    val_mse: Option<f64>,
    ds: SpatialDataset,
    ybar: Vec<f64>,
    cfg: RunConfig,
}

fn load_for_inference(checkpoint: &Path, config: &Path, data: Option<&Path>) -> Result<Loaded, CliError> {
    let cfg = load_config(config, data, None)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let (a, b) = (&ckpt.spec, &cfg.model);
    if a.approach != b.approach || a.layer_kind != b.layer_kind {
        return Err(CliError::runtime(anyhow::anyhow!(
            "spec/checkpoint mismatch: config describes {} ({:?}) but the checkpoint holds {} ({:?})",
            b.approach,
            b.layer_kind,
            a.approach,
            a.layer_kind
        )));
    }
    let ds = prepare(&cfg, data, ckpt.normalization.as_ref())?;
    if ds.num_features() != ckpt.num_features {
        return Err(CliError::runtime(anyhow::anyhow!(
            "spec/checkpoint mismatch: dataset has {} features, checkpoint expects {}",
            ds.num_features(),
            ckpt.num_features
        )));
    }
    let model = ckpt.to_model()?;
    let ybar = global_ybar(&ds, model.spec().k)?;
    Ok(Loaded {
        model,
        val_mse: ckpt.val_mse,
        ds,
        ybar,
        cfg,
    })
}

pub fn eval(
    checkpoint: &Path,
    config: &Path,
    data: Option<&Path>,
    taus: Option<&str>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let Loaded {
        model,
        val_mse,
        ds,
        ybar,
        cfg,
    } = load_for_inference(checkpoint, config, data)?;
    let mut opts = cfg.eval.options(cfg.train.eval_chunk());
    if let Some(t) = taus {
        opts.grid = parse_taus(t).map_err(|e| CliError::usage(format!("--taus: {e}")))?;
    }
    create_dir(out_dir)?;
    let rows = ds.indices(cfg.eval.split.into());
    let report = evaluate(&model, &ds, &rows, &ybar, val_mse, &opts)?;
    report.write_json(out_dir.join(REPORT_FILE))?;
    report.write_ecp_csv(out_dir.join(ECP_FILE))?;
    log::info!(
        "{} rows: MSE {:.5}, MAE {:.5}, MPE {:.5}, MADECP {:.4}, {} crossings",
        report.n,
        report.mse,
        report.mae,
        report.mpe,
        report.madecp,
        report.crossings.count
    );
    Ok(())
}

pub fn predict(checkpoint: &Path, config: &Path, data: Option<&Path>, taus: &str, out_dir: &Path) -> Result<(), CliError> {
    let taus = parse_taus(taus).map_err(|e| CliError::usage(format!("--taus: {e}")))?;
    validate_taus(&taus).map_err(CliError::usage)?;
    let Loaded {
        model,
        val_mse,
        ds,
        ybar,
        cfg,
    } = load_for_inference(checkpoint, config, data)?;
    create_dir(out_dir)?;
    let rows = ds.indices(cfg.eval.split.into());
    let set = EvalSet::new(&model, &ds, &rows, &ybar, cfg.train.eval_chunk())?;
    let q = if model.approach().is_quantile() {
        set.quantile_matrix(&taus)?
    } else {
        let val_mse = val_mse.ok_or_else(|| {
            CliError::runtime(anyhow::anyhow!("checkpoint lacks the validation MSE of its Gaussian baseline"))
        })?;
        GaussianPredictor::from_val_mse(set.point_predictions()?, val_mse)?.quantile_matrix(&taus)?
    };
    let audit = crossing_audit_matrix(&q);

    let mut w = csv::Writer::from_path(out_dir.join(PREDICTIONS_FILE)).map_err(CliError::runtime)?;
    let mut header = vec!["row".to_string(), "y".to_string()];
    header.extend(taus.iter().map(|t| format!("q_{t}")));
    w.write_record(&header).map_err(CliError::runtime)?;
    for (i, &r) in set.rows().iter().enumerate() {
        let mut rec = vec![r.to_string(), ds.y[r].to_string()];
        rec.extend((0..taus.len()).map(|j| q.get(i, j).to_string()));
        w.write_record(&rec).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    log::info!("{} rows × {} levels, {} crossings", q.rows(), taus.len(), audit.count);
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchmarkRow {
    #[serde(rename = "Model")]
    model: String,
    #[serde(rename = "Epochs")]
    epochs: usize,
    #[serde(rename = "Parameters")]
    parameters: usize,
    #[serde(rename = "MSE")]
    mse: f64,
    #[serde(rename = "MAE")]
    mae: f64,
    #[serde(rename = "MPE")]
    mpe: f64,
    #[serde(rename = "MADECP")]
    madecp: f64,
}

fn benchmark_one(path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<BenchmarkRow, CliError> {
    let cfg = load_config(path, None, seed)?;
    let stem = path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    let run = train_into(&cfg, None, &out_dir.join(stem))?;
    let rows = run.ds.indices(Split::Test);
    let report = evaluate(
        &run.model,
        &run.ds,
        &rows,
        &run.ybar,
        Some(run.val_mse),
        &cfg.eval.options(cfg.train.eval_chunk()),
    )?;
    Ok(BenchmarkRow {
        model: run.model_name,
        epochs: run.epochs,
        parameters: run.parameters,
        mse: report.mse,
        mae: report.mae,
        mpe: report.mpe,
        madecp: report.madecp,
    })
}

pub fn benchmark(config_dir: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let entries = fs::read_dir(config_dir)
        .map_err(|e| CliError::usage(format!("--config {}: {e}", config_dir.display())))?;
    let mut configs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    configs.sort();
    if configs.is_empty() {
        return Err(CliError::usage(format!(
            "--config {}: no *.json run configs found",
            config_dir.display()
        )));
    }
    create_dir(out_dir)?;

    let mut table = csv::Writer::from_path(out_dir.join(BENCHMARK_FILE)).map_err(CliError::runtime)?;
    let mut failures = Vec::new();
    let mut ok = 0;
    for path in &configs {
        log::info!("benchmark run {}", path.display());
        match benchmark_one(path, out_dir, seed) {
            Ok(row) => {
                table.serialize(&row).map_err(CliError::runtime)?;
                ok += 1;
            }
            Err(e) => {
                log::error!("{} failed: {e}", path.display());
                failures.push((path.display().to_string(), e.to_string()));
            }
        }
    }
    table.flush().map_err(CliError::runtime)?;
    let mut fw = csv::Writer::from_path(out_dir.join(BENCHMARK_FAILURES_FILE)).map_err(CliError::runtime)?;
    fw.write_record(["config", "error"]).map_err(CliError::runtime)?;
    for (c, e) in &failures {
        fw.write_record([c, e]).map_err(CliError::runtime)?;
    }
    fw.flush().map_err(CliError::runtime)?;

    if ok == 0 {
        return Err(CliError::runtime(anyhow::anyhow!(
            "all {} benchmark runs failed",
            configs.len()
        )));
    }
    Ok(())
}

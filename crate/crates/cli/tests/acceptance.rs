//! Acceptance criteria 1 to 10, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). The process exits 0 after
//! reporting so the workspace test run stays usable while a criterion is
//! known to fail; set `PEGQNN_ACCEPTANCE_STRICT=1` to exit 1 on any FAIL.
//! Criterion 6 reads California Housing from `PEGQNN_CALIFORNIA_CSV` or
//! `data/california_housing.csv` at the workspace root.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use pegqnn_core::autodiff::{ParamStore, Tensor};
use pegqnn_core::data::{synth_gaussian_field, SynthParams, SyntheticField};
use pegqnn_core::encoder::SinusoidalConfig;
use pegqnn_core::gradcheck::{run_suite, DEFAULT_STEP};
use pegqnn_core::metrics::{
    ecp_curve, gaussian_oracle_mpe, gold_standard_band, madecp_from_curve, normal, pinball, FnPredictor,
};
use pegqnn_core::spatial::{great_circle_distance, local_morans_i, neighbor_target_mean, training_neighbor_mean, Neighbor};
use pegqnn_core::training::{evaluate, pinball_loss, Adam, AdamConfig, EvalOptions, TrainOutcome};
use pegqnn_core::{
    build_knn_graph, load_csv, normalize_and_split, train, Approach, CalibrationReport, CsvSchema, LatLon, ModelSpec,
    SeededRng, SpatialDataset, SpatialGraph, Split, Tape, TauInjection, TrainConfig,
};
use rand::{Rng, SeedableRng};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let reports = run_suite(50, 2024, DEFAULT_STEP).expect("gradient suite");
    let secs = start.elapsed().as_secs_f64();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("cases");
    let all = reports.iter().all(|r| r.instances == 50 && r.max_rel_error < 1e-4);
    Verdict::new(
        all && secs < 60.0,
        format!(
            "{} operations × 50 instances, worst {} at {:.2e} (< 1e-4), {secs:.1}s",
            reports.len(),
            worst.name,
            worst.max_rel_error
        ),
    )
}

fn c2_oracles() -> Verdict {
    let r = 6371.0;
    let o = LatLon { lat: 0.0, lon: 0.0 };
    let quarter = great_circle_distance(o, LatLon { lat: 0.0, lon: 90.0 }).unwrap();
    let half = great_circle_distance(o, LatLon { lat: 0.0, lon: 180.0 }).unwrap();
    let pole = great_circle_distance(o, LatLon { lat: 90.0, lon: 0.0 }).unwrap();
    let hav = (quarter - std::f64::consts::FRAC_PI_2 * r).abs() < 1e-9
        && (half - std::f64::consts::PI * r).abs() < 1e-9
        && (pole - std::f64::consts::FRAC_PI_2 * r).abs() < 1e-9;

    let adj = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let nb = |j| vec![Neighbor { index: j, distance_km: 1.0 }];
    let g = SpatialGraph::from_parts(vec![nb(1), nb(0)], adj).unwrap();
    let prop = g.propagation().data().iter().all(|v| (v - 0.5).abs() < 1e-9);

    let pin = (pinball(0.9, 1.0) - 0.9).abs() < 1e-9
        && (pinball(0.9, -1.0) - 0.1).abs() < 1e-9
        && [-2.0, -0.3, 0.0, 0.7, 5.0]
            .iter()
            .all(|&x: &f64| (pinball(0.5, x) - 0.5 * x.abs()).abs() < 1e-9);

    let pts: Vec<(f64, f64)> = (0..9).map(|i| (34.0 + 0.1 * i as f64, -118.0 + 0.07 * (i * i) as f64)).collect();
    let g9 = build_knn_graph(&pegqnn_core::CoordinateSet::from_pairs(&pts).unwrap(), 3).unwrap();
    let moran = local_morans_i(&[4.2; 9], &g9).unwrap().iter().all(|v| v.abs() < 1e-9);

    Verdict::new(
        hav && prop && pin && moran,
        format!(
            "haversine {hav} (quarter {quarter:.9} km), propagation {prop}, pinball {pin}, constant-field Moran {moran}"
        ),
    )
}

fn c3_pinball_minimizer() -> Verdict {
    let start = Instant::now();
    let mut rng = SeededRng::seed_from_u64(3);
    let sample: Vec<f64> = (0..1000)
        .map(|_| normal::inverse_cdf(rng.random_range(1e-9..1.0 - 1e-9)))
        .collect();
    let mut sorted = sample.clone();
    sorted.sort_by(f64::total_cmp);
    let loss = |tau: f64, q: f64| sample.iter().map(|y| pinball(tau, y - q)).sum::<f64>() / sample.len() as f64;
    let mut worst: f64 = 0.0;
    let mut oracle_ok = true;
    for tau in [0.1, 0.25, 0.5, 0.9] {
        let empirical = sorted[((tau * 1000.0_f64).ceil() as usize).max(1) - 1];
        // brute-force grid search over [-4, 4] at 1e-3 resolution
        let grid_best = (0..=8000)
            .map(|i| -4.0 + i as f64 * 1e-3)
            .min_by(|a, b| loss(tau, *a).total_cmp(&loss(tau, *b)))
            .unwrap();
        oracle_ok &= (grid_best - empirical).abs() < 0.02 && loss(tau, empirical) <= loss(tau, grid_best) + 1e-12;

        let mut store = ParamStore::new();
        let id = store.add("q", Tensor::scalar(0.0));
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            &store,
        );
        let y = Tensor::column(&sample);
        let taus = Tensor::column(&vec![tau; sample.len()]);
        for step in 0..3000 {
            if step == 2000 {
                adam.config.learning_rate = 1e-3;
            }
            let mut tape = Tape::new();
            let q = tape.param(&store, id);
            let ones = tape.constant(Tensor::column(&vec![1.0; sample.len()]));
            let qcol = tape.mul(ones, q).unwrap();
            let yv = tape.constant(y.clone());
            let tv = tape.constant(taus.clone());
            let l = pinball_loss(&mut tape, yv, qcol, tv).unwrap();
            tape.backward(l).unwrap();
            store.zero_grad();
            tape.accumulate_param_grads(&mut store);
            adam.step(&mut store).unwrap();
        }
        worst = worst.max((store.value(id).item() - empirical).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        worst < 0.02 && oracle_ok && secs < 30.0,
        format!("max |q̂ − empirical quantile| = {worst:.4} (< 0.02), grid oracle agrees {oracle_ok}, {secs:.1}s"),
    )
}

/// The desk-scale task of criteria 4, 5 and 7.
fn criterion4_field(seed: u64) -> (SyntheticField, SpatialDataset) {
    let field = synth_gaussian_field(5000, seed, &SynthParams::default()).unwrap();
    let ds = normalize_and_split(field.dataset.clone(), (0.8, 0.1, 0.1), seed).unwrap();
    (field, ds)
}

fn criterion4_spec(seed: u64) -> ModelSpec {
    ModelSpec {
        sinusoidal: SinusoidalConfig {
            sigma_min: 0.2,
            sigma_max: 4.0,
            num_scales: 8,
        },
        seed,
        ..ModelSpec::new(Approach::PegqnnFull)
    }
}

fn criterion4_train(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        max_epochs: 300,
        patience: 30,
        seed,
        ..TrainConfig::default()
    }
}

fn test_report(out: &TrainOutcome, ds: &SpatialDataset, cfg: &TrainConfig) -> CalibrationReport {
    let opts = EvalOptions {
        chunk_size: cfg.eval_chunk(),
        ..EvalOptions::default()
    };
    evaluate(&out.model, ds, &ds.indices(Split::Test), &out.ybar, Some(out.val_mse), &opts).unwrap()
}

struct C4Run {
    seed: u64,
    report: CalibrationReport,
    oracle_mpe: f64,
    best_val_mpe: f64,
    secs: f64,
}

fn c4_runs() -> Vec<C4Run> {
    (0..5)
        .map(|seed| {
            let start = Instant::now();
            let (field, ds) = criterion4_field(seed);
            let cfg = criterion4_train(seed);
            let out = train(&ds, &criterion4_spec(seed), &cfg).unwrap();
            let report = test_report(&out, &ds, &cfg);
            let sig: Vec<f64> = ds
                .indices(Split::Test)
                .iter()
                .map(|&i| field.sigma_normalized(&ds, i))
                .collect();
            C4Run {
                seed,
                report,
                oracle_mpe: gaussian_oracle_mpe(&sig),
                best_val_mpe: out.best_val_loss,
                secs: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn c4_calibration(runs: &[C4Run]) -> Verdict {
    let madecp = median(runs.iter().map(|r| r.report.madecp).collect());
    let rel = median(runs.iter().map(|r| (r.report.mpe / r.oracle_mpe - 1.0).abs()).collect());
    let secs: f64 = runs.iter().map(|r| r.secs).sum();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("s{}: {:.3}/{:.3}", r.seed, r.report.madecp, r.report.mpe / r.oracle_mpe))
        .collect();
    Verdict::new(
        madecp <= 0.05 && rel <= 0.15 && secs < 600.0,
        format!(
            "median MADECP {madecp:.4} (≤ 0.05), median |MPE/oracle − 1| {rel:.3} (≤ 0.15), {secs:.0}s [MADECP/ratio {}]",
            per_seed.join(", ")
        ),
    )
}

fn c5_crossings(runs: &[C4Run]) -> Verdict {
    // final-layer injection with the nonnegative τ weight
    let (_, ds) = criterion4_field(0);
    let cfg = criterion4_train(0);
    let spec = ModelSpec {
        tau_injection: TauInjection::Final,
        ..criterion4_spec(0)
    };
    let out = train(&ds, &spec, &cfg).unwrap();
    let fin = test_report(&out, &ds, &cfg).crossings;
    let rates: Vec<f64> = runs.iter().map(|r| r.report.crossings.rate).collect();
    let pen = median(rates.clone());
    Verdict::new(
        fin.count == 0 && pen < 1e-3,
        format!(
            "final injection: {} crossings over {} pairs (must be 0); penultimate (criterion-4 model): median rate {:.4}% (< 0.1%), per seed {:?}",
            fin.count,
            fin.pairs,
            100.0 * pen,
            rates.iter().map(|r| format!("{:.3}%", 100.0 * r)).collect::<Vec<_>>()
        ),
    )
}

/// Column names of the two common California Housing CSV layouts.
fn california_schema(header: &str) -> Option<CsvSchema> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    if header.contains("median_house_value") {
        Some(CsvSchema {
            target: "median_house_value".into(),
            features: s(&[
                "median_income",
                "housing_median_age",
                "total_rooms",
                "total_bedrooms",
                "households",
                "population",
            ]),
            latitude: "latitude".into(),
            longitude: "longitude".into(),
        })
    } else if header.contains("MedHouseVal") {
        Some(CsvSchema {
            target: "MedHouseVal".into(),
            features: s(&["MedInc", "HouseAge", "AveRooms", "AveBedrms", "AveOccup", "Population"]),
            latitude: "Latitude".into(),
            longitude: "Longitude".into(),
        })
    } else {
        None
    }
}

fn california_path() -> PathBuf {
    std::env::var_os("PEGQNN_CALIFORNIA_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/california_housing.csv"))
}

/// Seeded subsample of `m` rows.
fn subsample(ds: &SpatialDataset, m: usize, seed: u64) -> SpatialDataset {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut SeededRng::seed_from_u64(seed));
    idx.truncate(m.min(ds.len()));
    idx.sort_unstable();
    let y = idx.iter().map(|&i| ds.y[i]).collect();
    SpatialDataset::new(y, ds.x.select_rows(&idx), ds.coords.select(&idx), ds.feature_names.clone()).unwrap()
}

struct Ordering {
    gnn_mse: f64,
    pegnn_mse: f64,
    pegnn_madecp: f64,
    full_mse: f64,
    full_madecp: f64,
    lambdas: Vec<f64>,
}

/// Median test metrics of GCN, PE-GCN (λ chosen on validation MSE) and
/// PE-GQCN over five seeds on 5,000-row subsamples split 80/10/10.
fn table2_ordering(raw: &SpatialDataset, sinusoidal: SinusoidalConfig) -> Ordering {
    let mut rows = Vec::new();
    let mut lambdas = Vec::new();
    for seed in 0..5u64 {
        let ds = normalize_and_split(subsample(raw, 5000, seed), (0.8, 0.1, 0.1), seed).unwrap();
        let cfg = criterion4_train(seed);
        let base = ModelSpec {
            sinusoidal,
            seed,
            ..ModelSpec::new(Approach::Gnn)
        };
        let gnn = train(&ds, &base, &cfg).unwrap();
        let gnn_r = test_report(&gnn, &ds, &cfg);

        let (lambda, pegnn) = [0.25, 0.5, 1.0]
            .iter()
            .map(|&l| {
                let spec = ModelSpec {
                    approach: Approach::PeGnn,
                    lambda: Some(l),
                    ..base.clone()
                };
                (l, train(&ds, &spec, &cfg).unwrap())
            })
            .min_by(|a, b| a.1.val_mse.total_cmp(&b.1.val_mse))
            .unwrap();
        lambdas.push(lambda);
        let pegnn_r = test_report(&pegnn, &ds, &cfg);

        let full_spec = ModelSpec {
            approach: Approach::PegqnnFull,
            ..base.clone()
        };
        let full = train(&ds, &full_spec, &cfg).unwrap();
        let full_r = test_report(&full, &ds, &cfg);
        rows.push((gnn_r.mse, pegnn_r.mse, pegnn_r.madecp, full_r.mse, full_r.madecp));
    }
    Ordering {
        gnn_mse: median(rows.iter().map(|r| r.0).collect()),
        pegnn_mse: median(rows.iter().map(|r| r.1).collect()),
        pegnn_madecp: median(rows.iter().map(|r| r.2).collect()),
        full_mse: median(rows.iter().map(|r| r.3).collect()),
        full_madecp: median(rows.iter().map(|r| r.4).collect()),
        lambdas,
    }
}

fn ordering_holds(o: &Ordering) -> bool {
    o.full_mse < o.pegnn_mse && o.full_madecp < o.pegnn_madecp && o.pegnn_mse < o.gnn_mse
}

fn describe(o: &Ordering) -> String {
    format!(
        "median test MSE PE-GQCN {:.5} < PE-GCN {:.5} < GCN {:.5}; MADECP PE-GQCN {:.4} < PE-GCN {:.4}; λ chosen {:?}",
        o.full_mse, o.pegnn_mse, o.gnn_mse, o.full_madecp, o.pegnn_madecp, o.lambdas
    )
}

fn c6_california() -> (Verdict, Option<String>) {
    let start = Instant::now();
    let path = california_path();
    let header = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| t.lines().next().map(String::from));
    let Some(header) = header else {
        // labeled supplementary run of the same protocol on synthetic data
        let field = synth_gaussian_field(6000, 11, &SynthParams::default()).unwrap();
        let sup = table2_ordering(&field.dataset, criterion4_spec(0).sinusoidal);
        let note = format!(
            "supplementary, synthetic field (not criterion 6): ordering holds {}; {}; {:.0}s",
            ordering_holds(&sup),
            describe(&sup),
            start.elapsed().as_secs_f64()
        );
        return (
            Verdict::new(
                false,
                format!(
                    "California Housing CSV not found at {} (set PEGQNN_CALIFORNIA_CSV); criterion not evaluated",
                    path.display()
                ),
            ),
            Some(note),
        );
    };
    let Some(schema) = california_schema(&header) else {
        return (Verdict::new(false, format!("unrecognized California Housing header in {}", path.display())), None);
    };
    let raw = load_csv(&path, &schema).unwrap();
    let o = table2_ordering(&raw, criterion4_spec(0).sinusoidal);
    (
        Verdict::new(
            ordering_holds(&o) && start.elapsed().as_secs() < 1800,
            format!("{}; {:.0}s", describe(&o), start.elapsed().as_secs_f64()),
        ),
        None,
    )
}

fn c7_d_insensitivity(runs: &[C4Run]) -> Verdict {
    let mut rel = Vec::new();
    for r in runs.iter().take(3) {
        let (_, ds) = criterion4_field(r.seed);
        let cfg = TrainConfig {
            d: 8,
            ..criterion4_train(r.seed)
        };
        let out8 = train(&ds, &criterion4_spec(r.seed), &cfg).unwrap();
        rel.push((out8.best_val_loss - r.best_val_mpe).abs() / r.best_val_mpe);
    }
    let m = median(rel.clone());
    Verdict::new(
        m < 0.2,
        format!(
            "median relative difference of converged validation MPE, d=1 vs d=8: {:.3} (< 0.2), per seed {:?}",
            m,
            rel.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn c8_gold_standard() -> Verdict {
    let grid: Vec<f64> = (1..=99).map(|j| j as f64 / 100.0).collect();
    let n = 10_000;
    let band = gold_standard_band(n, &grid, 0.99).unwrap();
    let inside: Vec<f64> = (0..20u64)
        .map(|seed| {
            let mut rng = SeededRng::seed_from_u64(seed);
            let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sd: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.5)).collect();
            let y: Vec<f64> = (0..n)
                .map(|i| mu[i] + sd[i] * normal::inverse_cdf(rng.random_range(1e-12..1.0 - 1e-12)))
                .collect();
            let pred = FnPredictor::new(n, |i, t| mu[i] + sd[i] * normal::inverse_cdf(t));
            let curve = ecp_curve(&y, &pred, &grid).unwrap();
            curve
                .iter()
                .zip(&band)
                .filter(|((_, e), (lo, hi))| e >= lo && e <= hi)
                .count() as f64
        })
        .collect();
    let med = median(inside);
    let y: Vec<f64> = (0..100).map(|i| i as f64).collect();
    let all_max = FnPredictor::new(100, |_, _| f64::MAX);
    let madecp = madecp_from_curve(&ecp_curve(&y, &all_max, &grid).unwrap());
    Verdict::new(
        med >= 95.0 && madecp == 0.5,
        format!("median grid points inside the 99% band {med} of 99 (≥ 95); all-max MADECP = {madecp}"),
    )
}

fn c9_leakage() -> Verdict {
    let field = synth_gaussian_field(400, 9, &SynthParams::default()).unwrap();
    let ds = normalize_and_split(field.dataset, (0.8, 0.1, 0.1), 9).unwrap();
    let mask = ds.train_mask();
    let base = training_neighbor_mean(&ds.coords, &ds.y, &mask, 5).unwrap();
    let graph = build_knn_graph(&ds.coords, 5).unwrap();
    let base_batch = neighbor_target_mean(&graph, &ds.y, &mask, 0.5).unwrap();
    let mut violations = 0;
    let train_rows = ds.indices(Split::Train);
    for &i in &train_rows {
        let mut y = ds.y.clone();
        y[i] += 1000.0;
        let global = training_neighbor_mean(&ds.coords, &y, &mask, 5).unwrap();
        let batch = neighbor_target_mean(&graph, &y, &mask, 0.5).unwrap();
        if global[i] != base[i] || batch[i] != base_batch[i] {
            violations += 1;
        }
    }
    Verdict::new(
        violations == 0,
        format!(
            "ȳ_i bit-identical after perturbing y_i, {} of {} training rows (global and batch neighbour means)",
            train_rows.len() - violations,
            train_rows.len()
        ),
    )
}

fn c10_reproducibility() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "dataset": { "synthetic": { "n": 1500, "seed": 5 }, "fractions": [0.8, 0.1, 0.1], "seed": 5 },
        "model": { "approach": "PEGQNN_FULL" },
        "train": { "batch_size": 64, "max_epochs": 15, "patience": 5 }
    });
    let path = dir.path().join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let mut summaries = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_pegqnn"))
            .env("RUST_LOG", "warn")
            .args(["train", "--config", path.to_str().unwrap(), "--seed", "17", "--out-dir", out.to_str().unwrap()])
            .status()
            .unwrap();
        if !status.success() {
            return Verdict::new(false, format!("cli train exited with {status}"));
        }
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("metadata");
        summaries.push(v);
    }
    let same = summaries[0] == summaries[1];
    Verdict::new(
        same,
        format!(
            "two `train --seed 17` runs: summaries identical apart from metadata: {same} (validation MPE {})",
            summaries[0]["validation"]["mpe"]
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut report = |k: usize, v: Verdict| {
        println!("{} criterion {k}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((k, v));
    };
    report(1, c1_gradients());
    report(2, c2_oracles());
    report(3, c3_pinball_minimizer());
    let runs = c4_runs();
    report(4, c4_calibration(&runs));
    report(5, c5_crossings(&runs));
    let (v6, note) = c6_california();
    report(6, v6);
    if let Some(n) = note {
        println!("INFO criterion 6 {n}");
    }
    report(7, c7_d_insensitivity(&runs));
    report(8, c8_gold_standard());
    report(9, c9_leakage());
    report(10, c10_reproducibility());

    let failed: Vec<usize> = results.iter().filter(|(_, v)| !v.pass).map(|(k, _)| *k).collect();
    println!(
        "acceptance: {}/{} criteria passed{} in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failing {failed:?}")
        },
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() && std::env::var("PEGQNN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

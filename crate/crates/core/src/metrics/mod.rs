//! Point and probabilistic evaluation: MSE, MAE, mean pinball error,
//! empirical coverage curves, MADECP, the binomial Gold-Standard envelope and
//! a quantile-crossing audit.

pub mod normal;

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::SeededRng;

/// Seed for MPE's τ draws unless the caller picks another.
pub const DEFAULT_EVAL_SEED: u64 = 20_240_101;
/// Confidence level of the Gold-Standard band.
pub const DEFAULT_GOLD_LEVEL: f64 = 0.99;
/// Adjacent quantiles closer than this are not counted as crossing.
pub const CROSSING_TOLERANCE: f64 = 1e-12;

/// The grid {0.01, 0.02, …, 0.99}.
pub fn tau_grid_99() -> Vec<f64> {
    (1..=99).map(|j| j as f64 / 100.0).collect()
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: (a, 1),
            right: (b, 1),
        })
    }
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("mse", y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(Error::Validation("mse of an empty sample".into()));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("mae", y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(Error::Validation("mae of an empty sample".into()));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// `ρ_τ(r) = max(τ r, (τ − 1) r)`.
pub fn pinball(tau: f64, r: f64) -> f64 {
    (tau * r).max((tau - 1.0) * r)
}

/// Anything that can produce conditional quantiles for a fixed set of rows.
pub trait QuantilePredictor {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `q̂_i(τ_i)` with one level per row.
    fn quantiles_per_row(&self, taus: &[f64]) -> Result<Vec<f64>>;

    /// `q̂_i(τ_j)` for every row and grid level, `n × grid.len()`.
    fn quantile_matrix(&self, grid: &[f64]) -> Result<Tensor> {
        let n = self.len();
        let mut out = Tensor::zeros(n, grid.len());
        for (j, &tau) in grid.iter().enumerate() {
            let col = self.quantiles_per_row(&vec![tau; n])?;
            for (i, v) in col.into_iter().enumerate() {
                out.set(i, j, v);
            }
        }
        Ok(out)
    }
}

/// Gaussian predictive law centered on point predictions with a common scale.
#[derive(Clone, Debug)]
pub struct GaussianPredictor {
    pub mean: Vec<f64>,
    pub sigma: f64,
}

impl GaussianPredictor {
    /// Standard deviation taken as the square root of a validation MSE.
    pub fn from_val_mse(mean: Vec<f64>, val_mse: f64) -> Result<Self> {
        if !(val_mse > 0.0 && val_mse.is_finite()) {
            return Err(Error::Validation(format!(
                "validation MSE must be positive, got {val_mse}"
            )));
        }
        Ok(Self {
            mean,
            sigma: val_mse.sqrt(),
        })
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            op: "quantile",
            detail: format!("τ = {tau} not in (0, 1)"),
        })
    }
}

impl QuantilePredictor for GaussianPredictor {
    fn len(&self) -> usize {
        self.mean.len()
    }

    fn quantiles_per_row(&self, taus: &[f64]) -> Result<Vec<f64>> {
        check_len("gaussian_quantiles", self.mean.len(), taus.len())?;
        taus.iter()
            .zip(&self.mean)
            .map(|(&t, &m)| {
                check_tau(t)?;
                Ok(m + self.sigma * normal::inverse_cdf(t))
            })
            .collect()
    }
}

/// Wraps a closure `(row, τ) ↦ q̂`.
pub struct FnPredictor<F> {
    n: usize,
    f: F,
}

impl<F: Fn(usize, f64) -> f64> FnPredictor<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(usize, f64) -> f64> QuantilePredictor for FnPredictor<F> {
    fn len(&self) -> usize {
        self.n
    }

    fn quantiles_per_row(&self, taus: &[f64]) -> Result<Vec<f64>> {
        check_len("fn_quantiles", self.n, taus.len())?;
        Ok(taus.iter().enumerate().map(|(i, &t)| (self.f)(i, t)).collect())
    }
}

/// Quantile predictions on a fixed ascending grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub tau_grid: Vec<f64>,
    /// `n × tau_grid.len()`.
    pub quantiles: Tensor,
}

impl PredictiveDistribution {
    pub fn new(tau_grid: Vec<f64>, quantiles: Tensor) -> Result<Self> {
        if tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("τ grid must be strictly ascending".into()));
        }
        if let Some(&t) = tau_grid.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            check_tau(t)?;
        }
        if quantiles.cols() != tau_grid.len() {
            return Err(Error::Shape {
                op: "predictive_distribution",
                left: quantiles.shape(),
                right: (quantiles.rows(), tau_grid.len()),
            });
        }
        Ok(Self { tau_grid, quantiles })
    }

    pub fn from_predictor(pred: &dyn QuantilePredictor, grid: &[f64]) -> Result<Self> {
        Self::new(grid.to_vec(), pred.quantile_matrix(grid)?)
    }

    pub fn n(&self) -> usize {
        self.quantiles.rows()
    }
}

/// `q̂_i(τ) = pred_i + √val_mse · Φ⁻¹(τ)` on the grid.
pub fn gaussian_baseline_quantiles(point_preds: &[f64], val_mse: f64, grid: &[f64]) -> Result<PredictiveDistribution> {
    let g = GaussianPredictor::from_val_mse(point_preds.to_vec(), val_mse)?;
    PredictiveDistribution::from_predictor(&g, grid)
}

/// Mean pinball error with one τ drawn uniformly from (0, 1) per row.
pub fn mpe(y: &[f64], pred: &dyn QuantilePredictor, seed: u64) -> Result<f64> {
    check_len("mpe", y.len(), pred.len())?;
    if y.is_empty() {
        return Err(Error::Validation("mpe of an empty sample".into()));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let taus: Vec<f64> = (0..y.len())
        .map(|_| loop {
            let t: f64 = rng.random();
            if t > 0.0 {
                break t;
            }
        })
        .collect();
    let q = pred.quantiles_per_row(&taus)?;
    Ok(y.iter()
        .zip(&q)
        .zip(&taus)
        .map(|((&yi, &qi), &t)| pinball(t, yi - qi))
        .sum::<f64>()
        / y.len() as f64)
}

/// Expected pinball loss of the true quantile function of `N(μ_i, σ_i²)`
/// with τ uniform on (0, 1): `∫ σ φ(Φ⁻¹(τ)) dτ = σ / (2√π)`, averaged over rows.
pub fn gaussian_oracle_mpe(sigmas: &[f64]) -> f64 {
    let c = 1.0 / (2.0 * std::f64::consts::PI.sqrt());
    sigmas.iter().sum::<f64>() * c / sigmas.len() as f64
}

/// Fraction of rows at or below their predicted quantile, per grid level.
pub fn ecp_curve(y: &[f64], pred: &dyn QuantilePredictor, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_len("ecp_curve", y.len(), pred.len())?;
    let q = pred.quantile_matrix(grid)?;
    ecp_from_matrix(y, &q, grid)
}

pub fn ecp_from_matrix(y: &[f64], q: &Tensor, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_len("ecp", y.len(), q.rows())?;
    check_len("ecp_grid", grid.len(), q.cols())?;
    if y.is_empty() {
        return Err(Error::Validation("coverage of an empty sample".into()));
    }
    let n = y.len() as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(j, &tau)| {
            let hits = y.iter().enumerate().filter(|&(i, &yi)| yi <= q.get(i, j)).count();
            (tau, hits as f64 / n)
        })
        .collect())
}

/// Mean |τ − ECP(τ)| over a curve.
pub fn madecp_from_curve(curve: &[(f64, f64)]) -> f64 {
    curve.iter().map(|(t, e)| (t - e).abs()).sum::<f64>() / curve.len() as f64
}

/// MADECP over the 99-point grid.
pub fn madecp(y: &[f64], pred: &dyn QuantilePredictor) -> Result<f64> {
    Ok(madecp_from_curve(&ecp_curve(y, pred, &tau_grid_99())?))
}

/// Exact binomial sizes up to this `n`; normal approximation beyond.
pub const EXACT_BINOMIAL_MAX_N: usize = 1000;

/// Per-τ central interval of `Binomial(n, τ)/n` at `level`.
pub fn gold_standard_band(n: usize, grid: &[f64], level: f64) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(Error::Validation("gold band needs n >= 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("band level {level} not in (0, 1)")));
    }
    let alpha = 1.0 - level;
    grid.iter()
        .map(|&tau| {
            check_tau(tau)?;
            Ok(if n <= EXACT_BINOMIAL_MAX_N {
                let cdf = binomial_cdf_table(n, tau);
                let lo = cdf.iter().position(|&c| c >= alpha / 2.0).unwrap_or(n);
                let hi = cdf.iter().position(|&c| c >= 1.0 - alpha / 2.0).unwrap_or(n);
                (lo as f64 / n as f64, hi as f64 / n as f64)
            } else {
                let z = normal::inverse_cdf(1.0 - alpha / 2.0);
                let half = z * (tau * (1.0 - tau) / n as f64).sqrt();
                ((tau - half).max(0.0), (tau + half).min(1.0))
            })
        })
        .collect()
}

/// `P(K ≤ k)` for `k = 0..=n`, built from log-space pmf values.
fn binomial_cdf_table(n: usize, p: f64) -> Vec<f64> {
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_pmf = Vec::with_capacity(n + 1);
    let mut l = n as f64 * lq;
    log_pmf.push(l);
    for k in 0..n {
        l += ((n - k) as f64).ln() - ((k + 1) as f64).ln() + lp - lq;
        log_pmf.push(l);
    }
    let max = log_pmf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pmf: Vec<f64> = log_pmf.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = pmf.iter().sum();
    let mut acc = 0.0;
    pmf.iter()
        .map(|v| {
            acc += v / total;
            acc
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingAudit {
    pub count: usize,
    /// Adjacent pairs examined.
    pub pairs: usize,
    pub rate: f64,
}

/// Counts `q[i][j+1] < q[i][j] − 1e-12` over all rows and adjacent levels.
pub fn crossing_audit(dist: &PredictiveDistribution) -> CrossingAudit {
    crossing_audit_matrix(&dist.quantiles)
}

pub fn crossing_audit_matrix(q: &Tensor) -> CrossingAudit {
    let mut count = 0;
    for i in 0..q.rows() {
        let row = q.row_slice(i);
        count += row
            .windows(2)
            .filter(|w| w[1] < w[0] - CROSSING_TOLERANCE)
            .count();
    }
    let pairs = q.rows() * q.cols().saturating_sub(1);
    CrossingAudit {
        count,
        pairs,
        rate: if pairs == 0 { 0.0 } else { count as f64 / pairs as f64 },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcpPoint {
    pub tau: f64,
    pub ecp: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub mpe: f64,
    pub madecp: f64,
    pub crossings: CrossingAudit,
    pub gold_level: f64,
    /// Grid points whose ECP falls inside the Gold band.
    pub inside_band: usize,
    pub ecp_curve: Vec<EcpPoint>,
}

impl CalibrationReport {
    /// `point` drives MSE/MAE; `pred` drives everything probabilistic.
    pub fn compute(
        y: &[f64],
        point: &[f64],
        pred: &dyn QuantilePredictor,
        grid: &[f64],
        seed: u64,
        gold_level: f64,
    ) -> Result<Self> {
        let q = pred.quantile_matrix(grid)?;
        let curve = ecp_from_matrix(y, &q, grid)?;
        let band = gold_standard_band(y.len(), grid, gold_level)?;
        let ecp_curve: Vec<EcpPoint> = curve
            .iter()
            .zip(&band)
            .map(|(&(tau, ecp), &(lo, hi))| EcpPoint {
                tau,
                ecp,
                band_lo: lo,
                band_hi: hi,
            })
            .collect();
        let inside_band = ecp_curve
            .iter()
            .filter(|p| p.ecp >= p.band_lo && p.ecp <= p.band_hi)
            .count();
        Ok(Self {
            n: y.len(),
            mse: mse(y, point)?,
            mae: mae(y, point)?,
            mpe: mpe(y, pred, seed)?,
            madecp: madecp_from_curve(&curve),
            crossings: crossing_audit_matrix(&q),
            gold_level,
            inside_band,
            ecp_curve,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Columns `tau, ecp, band_lo, band_hi`, one row per grid level.
    pub fn write_ecp_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.ecp_curve {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

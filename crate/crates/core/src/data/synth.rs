use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SpatialDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::metrics::normal;
use crate::spatial::{CoordinateSet, LatLon};
use crate::SeededRng;

/// Knobs of the synthetic field
/// `y = f(c) + β·x + s·σ(c)·ε`, `ε ~ N(0, 1)`, where `f` is a fixed sum of
/// sinusoids and `σ(c) = base + amp·(1 + sin(π v))/2` varies with longitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// One coefficient per feature column; features are U(0, 1).
    pub beta: Vec<f64>,
    pub noise_base: f64,
    pub noise_amp: f64,
    /// Multiplies the noise; 0 gives a noiseless field.
    pub noise_scale: f64,
    pub lat_range: (f64, f64),
    pub lon_range: (f64, f64),
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            beta: vec![1.0],
            noise_base: 0.2,
            noise_amp: 0.5,
            noise_scale: 1.0,
            lat_range: (32.0, 42.0),
            lon_range: (-124.0, -114.0),
        }
    }
}

/// A generated dataset together with its true conditional law.
#[derive(Clone, Debug)]
pub struct SyntheticField {
    /// Raw, unsplit data.
    pub dataset: SpatialDataset,
    /// Conditional median (= mean) of each row in raw units.
    pub median: Vec<f64>,
    /// Conditional standard deviation of each row in raw units.
    pub sigma: Vec<f64>,
}

impl SyntheticField {
    /// True τ-quantile of row `i` in raw units.
    pub fn true_quantile(&self, i: usize, tau: f64) -> f64 {
        self.median[i] + self.sigma[i] * normal::inverse_cdf(tau)
    }

    /// True τ-quantile of row `i` expressed in the target normalization of
    /// `normalized` (a split and normalized copy of this field's dataset).
    pub fn true_quantile_normalized(&self, normalized: &SpatialDataset, i: usize, tau: f64) -> f64 {
        let q = self.true_quantile(i, tau);
        normalized.normalization.as_ref().map_or(q, |n| n.target.apply(q))
    }

    /// Conditional standard deviation of row `i` in normalized target units.
    pub fn sigma_normalized(&self, normalized: &SpatialDataset, i: usize) -> f64 {
        let scale = normalized.normalization.as_ref().map_or(1.0, |n| n.target.scale());
        self.sigma[i] / scale
    }
}

fn surface(u: f64, v: f64) -> f64 {
    1.5 * (PI * u).sin() + (1.5 * PI * v).cos() + 0.5 * (PI * (u + v)).sin()
}

/// Draws `n ≥ 10` rows with coordinates uniform over the configured box.
pub fn synth_gaussian_field(n: usize, seed: u64, params: &SynthParams) -> Result<SyntheticField> {
    if n < 10 {
        return Err(Error::Config(format!("synthetic field needs n >= 10, got {n}")));
    }
    let (lat0, lat1) = params.lat_range;
    let (lon0, lon1) = params.lon_range;
    if !(lat1 > lat0 && lon1 > lon0) {
        return Err(Error::Config("empty coordinate box".into()));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let p = params.beta.len();
    let mut points = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * p);
    let (mut y, mut median, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let lat = rng.random_range(lat0..lat1);
        let lon = rng.random_range(lon0..lon1);
        let u = 2.0 * (lat - lat0) / (lat1 - lat0) - 1.0;
        let v = 2.0 * (lon - lon0) / (lon1 - lon0) - 1.0;
        let mut m = surface(u, v);
        for b in &params.beta {
            let xi: f64 = rng.random();
            x.push(xi);
            m += b * xi;
        }
        let s = params.noise_scale * (params.noise_base + params.noise_amp * 0.5 * (1.0 + (PI * v).sin()));
        let eps: f64 = StandardNormal.sample(&mut rng);
        points.push(LatLon { lat, lon });
        median.push(m);
        sigma.push(s);
        y.push(m + s * eps);
    }
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let dataset = SpatialDataset::new(y, Tensor::new(n, p, x)?, CoordinateSet::new(points)?, names)?;
    Ok(SyntheticField {
        dataset,
        median,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_field_equals_median() {
        let params = SynthParams {
            noise_scale: 0.0,
            ..Default::default()
        };
        let f = synth_gaussian_field(200, 1, &params).unwrap();
        assert_eq!(f.dataset.y, f.median);
        for i in 0..200 {
            assert_eq!(f.true_quantile(i, 0.5), f.median[i]);
        }
    }

    #[test]
    fn true_ninety_percent_intervals_cover() {
        let f = synth_gaussian_field(10_000, 7, &SynthParams::default()).unwrap();
        let hits = (0..10_000)
            .filter(|&i| {
                let y = f.dataset.y[i];
                y >= f.true_quantile(i, 0.05) && y <= f.true_quantile(i, 0.95)
            })
            .count();
        let cov = hits as f64 / 10_000.0;
        assert!((cov - 0.90).abs() <= 0.01, "{cov}");
    }

    #[test]
    fn heteroscedastic_and_in_box() {
        let f = synth_gaussian_field(500, 2, &SynthParams::default()).unwrap();
        let (lo, hi) = f.sigma.iter().fold((f64::MAX, f64::MIN), |(a, b), &s| (a.min(s), b.max(s)));
        assert!(hi - lo > 0.3);
        assert!(f.dataset.coords.points().iter().all(|p| (32.0..42.0).contains(&p.lat)));
        assert!(synth_gaussian_field(5, 0, &SynthParams::default()).is_err());
    }
}

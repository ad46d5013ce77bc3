//! Spatial datasets: CSV ingestion, train-fitted min-max normalization,
//! seeded splitting and a synthetic field with a known conditional law.

mod csv_loader;
mod synth;

pub use csv_loader::{load_csv, CsvSchema};
pub use synth::{synth_gaussian_field, SynthParams, SyntheticField};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::spatial::CoordinateSet;
use crate::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Affine map of `[min, max]` onto `[lo, hi]`. A zero-width range maps to
/// the identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
    pub lo: f64,
    pub hi: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64) -> Self {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        Self { min, max, lo, hi }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            v
        } else {
            self.lo + (v - self.min) * (self.hi - self.lo) / (self.max - self.min)
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            v
        } else {
            self.min + (v - self.lo) * (self.max - self.min) / (self.hi - self.lo)
        }
    }

    /// Factor converting a distance in normalized units back to raw units.
    pub fn scale(&self) -> f64 {
        if self.is_degenerate() {
            1.0
        } else {
            (self.max - self.min) / (self.hi - self.lo)
        }
    }
}

/// Train-fitted normalization of every column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Target onto `[0, 1]`.
    pub target: MinMax,
    /// Each feature onto `[0, 1]`.
    pub features: Vec<MinMax>,
    /// Latitude onto `[-1, 1]`.
    pub lat: MinMax,
    /// Longitude onto `[-1, 1]`.
    pub lon: MinMax,
}

#[derive(Clone, Debug)]
pub struct SpatialDataset {
    /// Targets (normalized once [`normalize_and_split`] has run).
    pub y: Vec<f64>,
    /// `n × p` features (normalized likewise).
    pub x: Tensor,
    /// Raw latitude/longitude, always in degrees.
    pub coords: CoordinateSet,
    pub split: Vec<Split>,
    pub feature_names: Vec<String>,
    pub normalization: Option<Normalization>,
    /// Rows skipped at load time because a field was missing.
    pub dropped_rows: usize,
}

impl SpatialDataset {
    pub fn new(y: Vec<f64>, x: Tensor, coords: CoordinateSet, feature_names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if x.rows() != n || coords.len() != n || feature_names.len() != x.cols() {
            return Err(Error::Shape {
                op: "spatial_dataset",
                left: (n, feature_names.len()),
                right: (coords.len(), x.cols()),
            });
        }
        Ok(Self {
            y,
            x,
            coords,
            split: vec![Split::Train; n],
            feature_names,
            normalization: None,
            dropped_rows: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn train_mask(&self) -> Vec<bool> {
        self.split.iter().map(|&s| s == Split::Train).collect()
    }

    /// `n × 2` coordinates mapped onto `[-1, 1]` by the fitted normalization,
    /// or raw degrees if the dataset was never normalized.
    pub fn normalized_coords(&self) -> Tensor {
        let mut out = Tensor::zeros(self.len(), 2);
        for (i, p) in self.coords.points().iter().enumerate() {
            let (a, b) = match &self.normalization {
                Some(n) => (n.lat.apply(p.lat), n.lon.apply(p.lon)),
                None => (p.lat, p.lon),
            };
            out.set(i, 0, a);
            out.set(i, 1, b);
        }
        out
    }

    pub fn select_y(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.y[i]).collect()
    }

    /// Maps a normalized target value back to raw units.
    pub fn denormalize_target(&self, v: f64) -> f64 {
        self.normalization.as_ref().map_or(v, |n| n.target.invert(v))
    }
}

/// Assigns a seeded uniform random split and min-max normalizes targets and
/// features onto `[0, 1]` and coordinates onto `[-1, 1]`, all fitted on the
/// training rows only. Values outside the training range are not clipped.
pub fn normalize_and_split(ds: SpatialDataset, fractions: (f64, f64, f64), seed: u64) -> Result<SpatialDataset> {
    let ds = assign_split(ds, fractions, seed)?;
    let norm = fit_normalization(&ds);
    apply_normalization(ds, norm)
}

/// Labels every row train, validation or test by a seeded shuffle without
/// touching any values.
pub fn assign_split(mut ds: SpatialDataset, fractions: (f64, f64, f64), seed: u64) -> Result<SpatialDataset> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    let n = ds.len();
    let n_train = (n as f64 * ft).round() as usize;
    let n_val = ((n as f64 * fv).round() as usize).min(n - n_train);
    if n_train < 2 {
        return Err(Error::Config(format!("only {n_train} training rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeededRng::seed_from_u64(seed));
    for (rank, &i) in order.iter().enumerate() {
        ds.split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(ds)
}

/// Min-max parameters fitted on the training rows of a raw dataset.
pub fn fit_normalization(ds: &SpatialDataset) -> Normalization {
    let train = ds.indices(Split::Train);
    let target = MinMax::fit(train.iter().map(|&i| ds.y[i]), 0.0, 1.0);
    if target.is_degenerate() {
        log::warn!("target is constant on the training rows; left unnormalized");
    }
    let features: Vec<MinMax> = (0..ds.num_features())
        .map(|c| {
            let mm = MinMax::fit(train.iter().map(|&i| ds.x.get(i, c)), 0.0, 1.0);
            if mm.is_degenerate() {
                log::warn!("feature `{}` is constant on the training rows; left unnormalized", ds.feature_names[c]);
            }
            mm
        })
        .collect();
    let lat = MinMax::fit(train.iter().map(|&i| ds.coords.get(i).lat), -1.0, 1.0);
    let lon = MinMax::fit(train.iter().map(|&i| ds.coords.get(i).lon), -1.0, 1.0);
    Normalization {
        target,
        features,
        lat,
        lon,
    }
}

/// Maps the raw targets and features of `ds` through `norm`, e.g. one
/// stored in a checkpoint.
pub fn apply_normalization(mut ds: SpatialDataset, norm: Normalization) -> Result<SpatialDataset> {
    if ds.normalization.is_some() {
        return Err(Error::Contract("dataset is already normalized".into()));
    }
    if norm.features.len() != ds.num_features() {
        return Err(Error::Schema(format!(
            "normalization covers {} features but the dataset has {}",
            norm.features.len(),
            ds.num_features()
        )));
    }
    for v in &mut ds.y {
        *v = norm.target.apply(*v);
    }
    for r in 0..ds.len() {
        for (c, mm) in norm.features.iter().enumerate() {
            let v = mm.apply(ds.x.get(r, c));
            ds.x.set(r, c, v);
        }
    }
    ds.normalization = Some(norm);
    Ok(ds)
}

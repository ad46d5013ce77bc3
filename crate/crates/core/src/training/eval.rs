use crate::autodiff::Tensor;
use crate::data::SpatialDataset;
use crate::error::{Error, Result};
use crate::metrics::{self, CalibrationReport, GaussianPredictor, QuantilePredictor};
use crate::model::{Model, ModelInputs};
use crate::spatial::{build_knn_graph, SpatialGraph};

/// One evaluation chunk: its rows and the graph built over them.
#[derive(Clone, Debug)]
struct Chunk {
    rows: Vec<usize>,
    graph: SpatialGraph,
    features: Tensor,
    coords: Tensor,
    ybar: Vec<f64>,
}

/// Rows of a dataset prepared for inference. Graphs are built over chunks
/// of the evaluation rows themselves, mirroring the per-batch graphs seen in
/// training.
#[derive(Clone, Debug)]
pub struct EvalSet<'m> {
    model: &'m Model,
    chunks: Vec<Chunk>,
    n: usize,
}

/// Splits `len` rows into consecutive chunks of about `size`, folding a tail
/// too small to hold a k-NN graph into the previous chunk.
pub(crate) fn chunk_bounds(len: usize, size: usize, min: usize) -> Vec<(usize, usize)> {
    let size = size.max(min).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + size).min(len);
        out.push((start, end));
        start = end;
    }
    if out.len() > 1 {
        let (s, e) = out[out.len() - 1];
        if e - s < min {
            out.pop();
            let last = out.len() - 1;
            out[last].1 = e;
        }
    }
    out
}

impl<'m> EvalSet<'m> {
    /// `ybar` holds a neighbour target mean for every dataset row (ignored
    /// unless the model uses it).
    pub fn new(model: &'m Model, ds: &SpatialDataset, rows: &[usize], ybar: &[f64], chunk_size: usize) -> Result<Self> {
        let k = model.spec().k;
        if rows.len() <= k {
            return Err(Error::Config(format!(
                "cannot evaluate {} rows with a {k}-NN graph",
                rows.len()
            )));
        }
        if ybar.len() != ds.len() {
            return Err(Error::Shape {
                op: "eval_ybar",
                left: (ybar.len(), 1),
                right: (ds.len(), 1),
            });
        }
        let coords_all = ds.normalized_coords();
        let chunks = chunk_bounds(rows.len(), chunk_size, k + 1)
            .into_iter()
            .map(|(s, e)| {
                let idx = rows[s..e].to_vec();
                let graph = build_knn_graph(&ds.coords.select(&idx), k)?;
                Ok(Chunk {
                    features: ds.x.select_rows(&idx),
                    coords: coords_all.select_rows(&idx),
                    ybar: idx.iter().map(|&i| ybar[i]).collect(),
                    graph,
                    rows: idx,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            chunks,
            n: rows.len(),
        })
    }

    fn inputs<'a>(&self, c: &'a Chunk) -> ModelInputs<'a> {
        ModelInputs {
            features: &c.features,
            coords: &c.coords,
            graph: &c.graph,
            ybar: self.model.approach().uses_ybar().then_some(c.ybar.as_slice()),
        }
    }

    /// Dataset row index of each evaluation position.
    pub fn rows(&self) -> Vec<usize> {
        self.chunks.iter().flat_map(|c| c.rows.iter().copied()).collect()
    }

    /// Point predictions: the model's point head, or the median for
    /// quantile approaches.
    pub fn point_predictions(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n);
        for c in &self.chunks {
            let inputs = self.inputs(c);
            if self.model.approach().is_quantile() {
                out.extend(self.model.predict_at(&inputs, &vec![0.5; c.rows.len()])?);
            } else {
                out.extend(self.model.predict_point(&inputs)?);
            }
        }
        Ok(out)
    }

    fn require_quantiles(&self) -> Result<()> {
        if self.model.approach().is_quantile() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "{} does not predict quantiles; wrap it in a Gaussian baseline",
                self.model.approach()
            )))
        }
    }
}

impl QuantilePredictor for EvalSet<'_> {
    fn len(&self) -> usize {
        self.n
    }

    fn quantiles_per_row(&self, taus: &[f64]) -> Result<Vec<f64>> {
        self.require_quantiles()?;
        if taus.len() != self.n {
            return Err(Error::Shape {
                op: "eval_quantiles",
                left: (self.n, 1),
                right: (taus.len(), 1),
            });
        }
        let mut out = Vec::with_capacity(self.n);
        let mut offset = 0;
        for c in &self.chunks {
            let m = c.rows.len();
            out.extend(self.model.predict_at(&self.inputs(c), &taus[offset..offset + m])?);
            offset += m;
        }
        Ok(out)
    }

    fn quantile_matrix(&self, grid: &[f64]) -> Result<Tensor> {
        self.require_quantiles()?;
        let mut out = Tensor::zeros(self.n, grid.len());
        let mut offset = 0;
        for c in &self.chunks {
            let q = self.model.predict_quantiles(&self.inputs(c), grid)?;
            for i in 0..q.rows() {
                for j in 0..grid.len() {
                    out.set(offset + i, j, q.get(i, j));
                }
            }
            offset += q.rows();
        }
        Ok(out)
    }
}

/// Settings for [`evaluate`].
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub grid: Vec<f64>,
    pub seed: u64,
    pub gold_level: f64,
    pub chunk_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            grid: metrics::tau_grid_99(),
            seed: metrics::DEFAULT_EVAL_SEED,
            gold_level: metrics::DEFAULT_GOLD_LEVEL,
            chunk_size: 256,
        }
    }
}

/// Full calibration report on `rows`. MSE-trained approaches get a Gaussian
/// predictive law with variance `val_mse`.
pub fn evaluate(
    model: &Model,
    ds: &SpatialDataset,
    rows: &[usize],
    ybar: &[f64],
    val_mse: Option<f64>,
    opts: &EvalOptions,
) -> Result<CalibrationReport> {
    let set = EvalSet::new(model, ds, rows, ybar, opts.chunk_size)?;
    let y: Vec<f64> = set.rows().iter().map(|&i| ds.y[i]).collect();
    let point = set.point_predictions()?;
    if model.approach().is_quantile() {
        CalibrationReport::compute(&y, &point, &set, &opts.grid, opts.seed, opts.gold_level)
    } else {
        let val_mse = val_mse.ok_or_else(|| {
            Error::Contract("the Gaussian baseline needs the validation MSE".into())
        })?;
        let g = GaussianPredictor::from_val_mse(point.clone(), val_mse)?;
        CalibrationReport::compute(&y, &point, &g, &opts.grid, opts.seed, opts.gold_level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_chunks_fold_back() {
        assert_eq!(chunk_bounds(10, 4, 3), vec![(0, 4), (4, 10)]);
        assert_eq!(chunk_bounds(12, 4, 3), vec![(0, 4), (4, 8), (8, 12)]);
        assert_eq!(chunk_bounds(5, 100, 3), vec![(0, 5)]);
    }
}

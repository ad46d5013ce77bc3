//! Dense and graph layers built on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::spatial::SpatialGraph;
use crate::SeededRng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Sigmoid,
    Exp,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Exp => tape.exp(x),
        }
    }
}

/// `f(x W + b)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let b = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self {
            w,
            b,
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn parameter_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w)?;
        let z = tape.add(xw, b)?;
        Ok(self.activation.apply(tape, z))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphLayerKind {
    #[default]
    Gcn,
    Gsage,
}

/// The per-graph constant matrices a graph layer reads, recorded once per tape.
#[derive(Clone, Copy, Debug)]
pub struct GraphInputs {
    pub propagation: Var,
    pub mean_neighbors: Var,
}

impl GraphInputs {
    pub fn record(tape: &mut Tape, graph: &SpatialGraph) -> Self {
        Self {
            propagation: tape.constant(graph.propagation().clone()),
            mean_neighbors: tape.constant(graph.row_standardized()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphLayer {
    pub kind: GraphLayerKind,
    pub w: ParamId,
    pub w_neigh: Option<ParamId>,
    pub b: ParamId,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GraphLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: GraphLayerKind,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} not in [0, 1)")));
        }
        let w = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let w_neigh = match kind {
            GraphLayerKind::Gcn => None,
            GraphLayerKind::Gsage => {
                Some(store.add_glorot(format!("{name}.weight_neigh"), in_dim, out_dim, rng))
            }
        };
        let b = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Ok(Self {
            kind,
            w,
            w_neigh,
            b,
            activation,
            dropout_rate,
            in_dim,
            out_dim,
        })
    }

    pub fn parameter_count(kind: GraphLayerKind, in_dim: usize, out_dim: usize) -> usize {
        let mats = match kind {
            GraphLayerKind::Gcn => 1,
            GraphLayerKind::Gsage => 2,
        };
        mats * in_dim * out_dim + out_dim
    }

    /// Dropout on the input (training only), then the layer update.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        graph: GraphInputs,
        rng: Option<&mut SeededRng>,
    ) -> Result<Var> {
        let n = tape.value(graph.propagation).rows();
        if tape.value(h).rows() != n {
            return Err(Error::Shape {
                op: "graph_layer",
                left: tape.value(h).shape(),
                right: (n, n),
            });
        }
        let h = dropout(tape, h, self.dropout_rate, rng)?;
        match self.kind {
            GraphLayerKind::Gcn => gcn_forward(tape, store, h, graph, self),
            GraphLayerKind::Gsage => gsage_forward(tape, store, h, graph, self),
        }
    }
}

/// `f(P H W + b)` with `P = D^{-1/2}(A + I)D^{-1/2}`.
pub fn gcn_forward(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    graph: GraphInputs,
    layer: &GraphLayer,
) -> Result<Var> {
    let w = tape.param(store, layer.w);
    let b = tape.param(store, layer.b);
    let hw = tape.matmul(h, w)?;
    let phw = tape.matmul(graph.propagation, hw)?;
    let z = tape.add(phw, b)?;
    Ok(layer.activation.apply(tape, z))
}

/// `f(H W_self + M H W_neigh + b)` with `M` the row-standardized adjacency.
pub fn gsage_forward(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    graph: GraphInputs,
    layer: &GraphLayer,
) -> Result<Var> {
    let w_neigh = layer
        .w_neigh
        .ok_or_else(|| Error::Contract("GSAGE layer without neighbour weights".into()))?;
    let w = tape.param(store, layer.w);
    let wn = tape.param(store, w_neigh);
    let b = tape.param(store, layer.b);
    let own = tape.matmul(h, w)?;
    let agg = tape.matmul(graph.mean_neighbors, h)?;
    let neigh = tape.matmul(agg, wn)?;
    let z = tape.add(own, neigh)?;
    let z = tape.add(z, b)?;
    Ok(layer.activation.apply(tape, z))
}

/// Inverted dropout. `rng = None` means inference and returns `h` untouched.
pub fn dropout(tape: &mut Tape, h: Var, rate: f64, rng: Option<&mut SeededRng>) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
    }
    let Some(rng) = rng else { return Ok(h) };
    if rate == 0.0 {
        return Ok(h);
    }
    let (r, c) = tape.value(h).shape();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(r, c, mask)?);
    tape.mul(h, mask)
}

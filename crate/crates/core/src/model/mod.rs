//! The five candidate architectures as forward pipelines over a shared tape.
//!
//! Every approach runs two graph layers. The quantile approaches then reduce
//! to an `s`-wide embedding φ, append `f(τ)` (and ȳ for the full model), and
//! predict the τ-quantile. Everything up to φ is the *trunk*; it does not
//! depend on τ, so several quantile levels can share a single trunk pass.

mod checkpoint;
mod spec;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use spec::{Approach, ModelSpec, TauActivation, TauInjection, DEFAULT_LAMBDA};

use rand::SeedableRng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::PositionalEncoder;
use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer, GraphInputs, GraphLayer};
use crate::spatial::SpatialGraph;
use crate::SeededRng;

/// One batch (or evaluation chunk) of model inputs.
#[derive(Clone, Copy, Debug)]
pub struct ModelInputs<'a> {
    /// `n × p` normalized features; `p` may be zero.
    pub features: &'a Tensor,
    /// `n × 2` coordinates normalized to `[-1, 1]`.
    pub coords: &'a Tensor,
    pub graph: &'a SpatialGraph,
    /// Neighbour target means; required by the full model only.
    pub ybar: Option<&'a [f64]>,
}

impl ModelInputs<'_> {
    pub fn n(&self) -> usize {
        self.graph.n()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `n × 1` point prediction or τ-quantile per node.
    pub prediction: Var,
    /// `n × 1` local Moran's I prediction (PE-GNN only).
    pub morans_prediction: Option<Var>,
}

/// τ-independent part of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Trunk {
    n: usize,
    /// Last shared graph embedding.
    pub embedding: Var,
    /// Reduced embedding φ (quantile approaches only).
    pub phi: Option<Var>,
    ybar: Option<Var>,
}

#[derive(Clone, Debug)]
enum QuantileHead {
    Penultimate {
        hidden: DenseLayer,
        out: DenseLayer,
    },
    Final {
        w: ParamId,
        w_tau: ParamId,
        w_ybar: Option<ParamId>,
        b: ParamId,
    },
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    num_features: usize,
    params: ParamStore,
    encoder: Option<PositionalEncoder>,
    graph_layers: Vec<GraphLayer>,
    target_head: Option<DenseLayer>,
    moran_head: Option<DenseLayer>,
    feature_reduce: Option<DenseLayer>,
    trunk_reduce: Option<DenseLayer>,
    quantile_head: Option<QuantileHead>,
}

impl Model {
    /// Builds and initializes a model for `num_features` raw feature columns,
    /// seeded from `spec.seed`.
    pub fn new(spec: ModelSpec, num_features: usize) -> Result<Self> {
        spec.validate()?;
        let mut rng = SeededRng::seed_from_u64(spec.seed);
        let mut params = ParamStore::new();
        let approach = spec.approach;
        let x_width = ModelSpec::feature_width(num_features);
        let gw = spec.graph_width;

        let encoder = if approach.uses_encoder() {
            Some(PositionalEncoder::new(
                &mut params,
                spec.sinusoidal,
                spec.pe_hidden,
                spec.u,
                &mut rng,
            )?)
        } else {
            None
        };

        let graph_in = match approach {
            Approach::PeGnn | Approach::PegqnnTau => x_width + spec.u,
            _ => x_width,
        };
        let graph_layers = vec![
            GraphLayer::new(
                &mut params,
                "graph1",
                spec.layer_kind,
                graph_in,
                gw,
                Activation::Relu,
                0.0,
                &mut rng,
            )?,
            GraphLayer::new(
                &mut params,
                "graph2",
                spec.layer_kind,
                gw,
                gw,
                Activation::Relu,
                spec.dropout_rate,
                &mut rng,
            )?,
        ];

        let mut model = Self {
            spec: spec.clone(),
            num_features,
            params,
            encoder,
            graph_layers,
            target_head: None,
            moran_head: None,
            feature_reduce: None,
            trunk_reduce: None,
            quantile_head: None,
        };
        let params = &mut model.params;
        match approach {
            Approach::Gnn => {
                model.target_head = Some(DenseLayer::new(params, "head", gw, 1, Activation::Identity, &mut rng));
            }
            Approach::PeGnn => {
                model.target_head = Some(DenseLayer::new(params, "head", gw, 1, Activation::Identity, &mut rng));
                model.moran_head = Some(DenseLayer::new(params, "moran_head", gw, 1, Activation::Identity, &mut rng));
            }
            Approach::PegqnnTau => {
                model.trunk_reduce = Some(DenseLayer::new(params, "reduce", gw, spec.s, Activation::Relu, &mut rng));
            }
            Approach::PegqnnTauStruct | Approach::PegqnnFull => {
                model.feature_reduce = Some(DenseLayer::new(params, "feature_reduce", gw, spec.g, Activation::Relu, &mut rng));
                model.trunk_reduce = Some(DenseLayer::new(
                    params,
                    "reduce",
                    spec.g + spec.u,
                    spec.s,
                    Activation::Relu,
                    &mut rng,
                ));
            }
        }
        if approach.is_quantile() {
            let extra = if approach.uses_ybar() { 2 } else { 1 };
            model.quantile_head = Some(match spec.tau_injection {
                TauInjection::Penultimate => QuantileHead::Penultimate {
                    hidden: DenseLayer::new(params, "qhead.hidden", spec.s + extra, spec.s, Activation::Relu, &mut rng),
                    out: DenseLayer::new(params, "qhead.out", spec.s, 1, Activation::Identity, &mut rng),
                },
                TauInjection::Final => {
                    let w = params.add_glorot("qhead.weight", spec.s, 1, &mut rng);
                    let w_tau = params.add_nonneg("qhead.weight_tau", Tensor::scalar(0.1));
                    let w_ybar = approach
                        .uses_ybar()
                        .then(|| params.add_glorot("qhead.weight_ybar", 1, 1, &mut rng));
                    let b = params.add("qhead.bias", Tensor::zeros(1, 1));
                    QuantileHead::Final { w, w_tau, w_ybar, b }
                }
            });
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn approach(&self) -> Approach {
        self.spec.approach
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn check_inputs(&self, inputs: &ModelInputs<'_>) -> Result<()> {
        let n = inputs.n();
        if inputs.features.rows() != n || inputs.coords.rows() != n {
            return Err(Error::Shape {
                op: "model_inputs",
                left: (n, n),
                right: (inputs.features.rows(), inputs.coords.rows()),
            });
        }
        if inputs.features.cols() != self.num_features {
            return Err(Error::Shape {
                op: "model_features",
                left: inputs.features.shape(),
                right: (n, self.num_features),
            });
        }
        if inputs.coords.cols() != 2 {
            return Err(Error::Shape {
                op: "model_coords",
                left: inputs.coords.shape(),
                right: (n, 2),
            });
        }
        if let Some(ybar) = inputs.ybar {
            if ybar.len() != n {
                return Err(Error::Shape {
                    op: "model_ybar",
                    left: (ybar.len(), 1),
                    right: (n, 1),
                });
            }
        }
        Ok(())
    }

    /// Everything before τ enters. `rng = None` runs in inference mode.
    pub fn trunk(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs<'_>,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<Trunk> {
        self.check_inputs(inputs)?;
        let approach = self.spec.approach;
        let ybar = if approach.uses_ybar() {
            let ybar = inputs.ybar.ok_or_else(|| {
                Error::Config("the full quantile model needs neighbour target means (ȳ)".into())
            })?;
            Some(tape.constant(Tensor::column(ybar)))
        } else {
            None
        };

        let x = if self.num_features == 0 {
            tape.constant(inputs.coords.clone())
        } else {
            tape.constant(inputs.features.clone())
        };
        let c_emb = match &self.encoder {
            Some(pe) => Some(pe.encode(tape, &self.params, &clamp_unit(inputs.coords))?),
            None => None,
        };
        let graph = GraphInputs::record(tape, inputs.graph);

        let mut h = match (approach, c_emb) {
            (Approach::PeGnn | Approach::PegqnnTau, Some(c)) => tape.concat_cols(&[x, c])?,
            _ => x,
        };
        for layer in &self.graph_layers {
            h = layer.forward(tape, &self.params, h, graph, rng.as_deref_mut())?;
        }
        let embedding = h;

        let phi = match approach {
            Approach::Gnn | Approach::PeGnn => None,
            Approach::PegqnnTau => Some(self.reduce()?.forward(tape, &self.params, embedding)?),
            Approach::PegqnnTauStruct | Approach::PegqnnFull => {
                let fr = self
                    .feature_reduce
                    .as_ref()
                    .ok_or_else(|| Error::Contract("missing feature reduction".into()))?;
                let x_emb = fr.forward(tape, &self.params, embedding)?;
                let c = c_emb.ok_or_else(|| Error::Contract("missing spatial embedding".into()))?;
                let l = tape.concat_cols(&[x_emb, c])?;
                Some(self.reduce()?.forward(tape, &self.params, l)?)
            }
        };
        Ok(Trunk {
            n: inputs.n(),
            embedding,
            phi,
            ybar,
        })
    }

    fn reduce(&self) -> Result<&DenseLayer> {
        self.trunk_reduce
            .as_ref()
            .ok_or_else(|| Error::Contract("missing trunk reduction".into()))
    }

    /// Point prediction (and Moran head) for the MSE-trained approaches.
    pub fn point_heads(&self, tape: &mut Tape, trunk: &Trunk) -> Result<ForwardOutput> {
        let head = self.target_head.as_ref().ok_or_else(|| {
            Error::Contract(format!("{} has no point-prediction head", self.spec.approach))
        })?;
        let z = head.forward(tape, &self.params, trunk.embedding)?;
        let prediction = self.spec.output_activation.apply(tape, z);
        let morans_prediction = match &self.moran_head {
            Some(m) => Some(m.forward(tape, &self.params, trunk.embedding)?),
            None => None,
        };
        Ok(ForwardOutput {
            prediction,
            morans_prediction,
        })
    }

    /// `q̂(τ)` per node from a trunk; `tau` holds one level per node.
    pub fn quantile_head(&self, tape: &mut Tape, trunk: &Trunk, tau: &[f64]) -> Result<Var> {
        let head = self.quantile_head.as_ref().ok_or_else(|| {
            Error::Contract(format!("{} does not predict quantiles", self.spec.approach))
        })?;
        if tau.len() != trunk.n {
            return Err(Error::Shape {
                op: "quantile_head",
                left: (trunk.n, 1),
                right: (tau.len(), 1),
            });
        }
        let phi = trunk
            .phi
            .ok_or_else(|| Error::Contract("trunk has no reduced embedding".into()))?;
        let t = tape.constant(Tensor::column(tau));
        let f_tau = match self.spec.tau_activation {
            TauActivation::Logit => tape.logit(t)?,
            TauActivation::Identity => t,
        };
        let z = match head {
            QuantileHead::Penultimate { hidden, out } => {
                let mut parts = vec![phi, f_tau];
                parts.extend(trunk.ybar);
                let phi_tilde = tape.concat_cols(&parts)?;
                let h = hidden.forward(tape, &self.params, phi_tilde)?;
                out.forward(tape, &self.params, h)?
            }
            QuantileHead::Final { w, w_tau, w_ybar, b } => {
                let w = tape.param(&self.params, *w);
                let w_tau = tape.param(&self.params, *w_tau);
                let b = tape.param(&self.params, *b);
                let lin = tape.matmul(phi, w)?;
                let tau_term = tape.mul(f_tau, w_tau)?;
                let mut z = tape.add(lin, tau_term)?;
                if let (Some(wy), Some(yb)) = (w_ybar, trunk.ybar) {
                    let wy = tape.param(&self.params, *wy);
                    let y_term = tape.mul(yb, wy)?;
                    z = tape.add(z, y_term)?;
                }
                tape.add(z, b)?
            }
        };
        Ok(self.spec.output_activation.apply(tape, z))
    }

    /// Full forward pass for whichever approach this model implements.
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs<'_>,
        tau: Option<&[f64]>,
        rng: Option<&mut SeededRng>,
    ) -> Result<ForwardOutput> {
        let trunk = self.trunk(tape, inputs, rng)?;
        if self.spec.approach.is_quantile() {
            let tau = tau.ok_or_else(|| {
                Error::Contract("quantile approaches need a τ per node".into())
            })?;
            Ok(ForwardOutput {
                prediction: self.quantile_head(tape, &trunk, tau)?,
                morans_prediction: None,
            })
        } else {
            self.point_heads(tape, &trunk)
        }
    }

    fn expect_approach(&self, ok: impl Fn(Approach) -> bool, what: &str) -> Result<()> {
        if ok(self.spec.approach) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "{what} called on a {} model",
                self.spec.approach
            )))
        }
    }

    pub fn forward_gnn(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs<'_>,
        rng: Option<&mut SeededRng>,
    ) -> Result<ForwardOutput> {
        self.expect_approach(|a| a == Approach::Gnn, "forward_gnn")?;
        self.forward(tape, inputs, None, rng)
    }

    pub fn forward_pegnn(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs<'_>,
        rng: Option<&mut SeededRng>,
    ) -> Result<ForwardOutput> {
        self.expect_approach(|a| a == Approach::PeGnn, "forward_pegnn")?;
        self.forward(tape, inputs, None, rng)
    }

    pub fn forward_pegqnn(
        &self,
        tape: &mut Tape,
        inputs: &ModelInputs<'_>,
        tau: &[f64],
        rng: Option<&mut SeededRng>,
    ) -> Result<ForwardOutput> {
        self.expect_approach(Approach::is_quantile, "forward_pegqnn")?;
        self.forward(tape, inputs, Some(tau), rng)
    }

    /// Inference-mode point predictions (MSE-trained approaches).
    pub fn predict_point(&self, inputs: &ModelInputs<'_>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let trunk = self.trunk(&mut tape, inputs, None)?;
        let out = self.point_heads(&mut tape, &trunk)?;
        Ok(tape.value(out.prediction).data().to_vec())
    }

    /// Inference-mode quantiles, `n × taus.len()`, sharing one trunk pass.
    pub fn predict_quantiles(&self, inputs: &ModelInputs<'_>, taus: &[f64]) -> Result<Tensor> {
        let n = inputs.n();
        let mut tape = Tape::new();
        let trunk = self.trunk(&mut tape, inputs, None)?;
        let mut out = Tensor::zeros(n, taus.len());
        for (j, &tau) in taus.iter().enumerate() {
            let q = self.quantile_head(&mut tape, &trunk, &vec![tau; n])?;
            for (i, v) in tape.value(q).data().iter().enumerate() {
                out.set(i, j, *v);
            }
        }
        Ok(out)
    }

    /// Quantiles with one level per node, one trunk pass.
    pub fn predict_at(&self, inputs: &ModelInputs<'_>, tau: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let trunk = self.trunk(&mut tape, inputs, None)?;
        let q = self.quantile_head(&mut tape, &trunk, tau)?;
        Ok(tape.value(q).data().to_vec())
    }
}

/// Coordinates are normalized on the training region; points slightly
/// outside it are pulled back onto `[-1, 1]` for the encoder only.
fn clamp_unit(coords: &Tensor) -> Tensor {
    coords.map(|v| v.clamp(-1.0, 1.0))
}

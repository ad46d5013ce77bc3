use serde::{Deserialize, Serialize};

use crate::encoder::{PositionalEncoder, SinusoidalConfig};
use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer, GraphLayer, GraphLayerKind};

/// The candidate architectures, from plain GNN to the full quantile model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Approach {
    #[serde(rename = "GNN")]
    Gnn,
    #[serde(rename = "PE-GNN")]
    PeGnn,
    #[serde(rename = "PEGQNN_TAU")]
    PegqnnTau,
    #[serde(rename = "PEGQNN_TAU_STRUCT")]
    PegqnnTauStruct,
    #[serde(rename = "PEGQNN_FULL", alias = "PE-GQNN")]
    PegqnnFull,
}

impl Approach {
    pub const ALL: [Approach; 5] = [
        Approach::Gnn,
        Approach::PeGnn,
        Approach::PegqnnTau,
        Approach::PegqnnTauStruct,
        Approach::PegqnnFull,
    ];

    pub fn is_quantile(self) -> bool {
        matches!(
            self,
            Approach::PegqnnTau | Approach::PegqnnTauStruct | Approach::PegqnnFull
        )
    }

    pub fn uses_encoder(self) -> bool {
        self != Approach::Gnn
    }

    /// Graph layers see only the features; the spatial embedding joins afterwards.
    pub fn structured(self) -> bool {
        matches!(self, Approach::PegqnnTauStruct | Approach::PegqnnFull)
    }

    pub fn uses_ybar(self) -> bool {
        self == Approach::PegqnnFull
    }

    /// Display name in the style `PE-GQCN τ, Structure`, specialised to the layer kind.
    pub fn model_name(self, kind: GraphLayerKind) -> String {
        let (plain, q) = match kind {
            GraphLayerKind::Gcn => ("GCN", "GQCN"),
            GraphLayerKind::Gsage => ("GSAGE", "GQSAGE"),
        };
        match self {
            Approach::Gnn => plain.to_string(),
            Approach::PeGnn => format!("PE-{plain}"),
            Approach::PegqnnTau => format!("PE-{q} τ"),
            Approach::PegqnnTauStruct => format!("PE-{q} τ, Structure"),
            Approach::PegqnnFull => format!("PE-{q}"),
        }
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Approach::Gnn => "GNN",
            Approach::PeGnn => "PE-GNN",
            Approach::PegqnnTau => "PEGQNN_TAU",
            Approach::PegqnnTauStruct => "PEGQNN_TAU_STRUCT",
            Approach::PegqnnFull => "PEGQNN_FULL",
        };
        f.write_str(s)
    }
}

/// Transformation applied to τ before it enters the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauActivation {
    #[default]
    Logit,
    Identity,
}

/// Where τ (and ȳ) join the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauInjection {
    /// One hidden layer sits between the injection and the output.
    #[default]
    Penultimate,
    /// τ enters the output layer with a nonnegative weight; quantiles cannot cross.
    Final,
}

pub const DEFAULT_LAMBDA: f64 = 0.5;

fn default_graph_width() -> usize {
    32
}
fn default_dim() -> usize {
    32
}
fn default_pe_hidden() -> usize {
    64
}
fn default_k() -> usize {
    5
}
fn default_dropout() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub approach: Approach,
    #[serde(default)]
    pub layer_kind: GraphLayerKind,
    /// Width of both graph layers.
    #[serde(default = "default_graph_width")]
    pub graph_width: usize,
    /// Feature-embedding width after the graph layers (structured variants).
    #[serde(default = "default_dim")]
    pub g: usize,
    /// Spatial-embedding width.
    #[serde(default = "default_dim")]
    pub u: usize,
    /// Width of the layer receiving τ and ȳ.
    #[serde(default = "default_dim")]
    pub s: usize,
    #[serde(default = "default_pe_hidden")]
    pub pe_hidden: usize,
    #[serde(default)]
    pub sinusoidal: SinusoidalConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Moran auxiliary-loss weight; PE-GNN only.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub tau_activation: TauActivation,
    #[serde(default)]
    pub tau_injection: TauInjection,
    #[serde(default)]
    pub output_activation: Activation,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(approach: Approach) -> Self {
        Self {
            approach,
            layer_kind: GraphLayerKind::Gcn,
            graph_width: default_graph_width(),
            g: default_dim(),
            u: default_dim(),
            s: default_dim(),
            pe_hidden: default_pe_hidden(),
            sinusoidal: SinusoidalConfig::default(),
            k: default_k(),
            lambda: None,
            tau_activation: TauActivation::default(),
            tau_injection: TauInjection::default(),
            output_activation: Activation::Identity,
            dropout_rate: default_dropout(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.graph_width, self.g, self.u, self.s, self.pe_hidden, self.k];
        if widths.contains(&0) {
            return Err(Error::Config(
                "graph_width, g, u, s, pe_hidden and k must all be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        match (self.approach, self.lambda) {
            (Approach::PeGnn, Some(l)) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::Config(format!("lambda must be >= 0, got {l}")))
            }
            (a, Some(_)) if a != Approach::PeGnn => {
                return Err(Error::Config(format!("lambda only applies to PE-GNN, not {a}")))
            }
            _ => {}
        }
        if self.approach.uses_encoder() {
            self.sinusoidal.validate()?;
        }
        Ok(())
    }

    pub fn lambda_or_default(&self) -> f64 {
        self.lambda.unwrap_or(DEFAULT_LAMBDA)
    }

    /// Columns fed to the first graph layer for `p` raw features. Datasets
    /// without features fall back to the two normalized coordinates.
    pub fn feature_width(p: usize) -> usize {
        if p == 0 {
            2
        } else {
            p
        }
    }

    /// Closed-form trainable parameter count for `p` input features.
    pub fn parameter_count(&self, p: usize) -> usize {
        let kind = self.layer_kind;
        let x = Self::feature_width(p);
        let gw = self.graph_width;
        let pe = if self.approach.uses_encoder() {
            PositionalEncoder::parameter_count(&self.sinusoidal, self.pe_hidden, self.u)
        } else {
            0
        };
        let graph_in = match self.approach {
            Approach::PeGnn | Approach::PegqnnTau => x + self.u,
            _ => x,
        };
        let graph = GraphLayer::parameter_count(kind, graph_in, gw)
            + GraphLayer::parameter_count(kind, gw, gw);
        let rest = match self.approach {
            Approach::Gnn => DenseLayer::parameter_count(gw, 1),
            Approach::PeGnn => 2 * DenseLayer::parameter_count(gw, 1),
            Approach::PegqnnTau => {
                DenseLayer::parameter_count(gw, self.s) + self.head_parameter_count(1)
            }
            Approach::PegqnnTauStruct | Approach::PegqnnFull => {
                let extra = if self.approach.uses_ybar() { 2 } else { 1 };
                DenseLayer::parameter_count(gw, self.g)
                    + DenseLayer::parameter_count(self.g + self.u, self.s)
                    + self.head_parameter_count(extra)
            }
        };
        pe + graph + rest
    }

    fn head_parameter_count(&self, extra: usize) -> usize {
        match self.tau_injection {
            TauInjection::Penultimate => {
                DenseLayer::parameter_count(self.s + extra, self.s)
                    + DenseLayer::parameter_count(self.s, 1)
            }
            // weights on φ, the τ weight, the optional ȳ weight, bias
            TauInjection::Final => self.s + extra + 1,
        }
    }
}

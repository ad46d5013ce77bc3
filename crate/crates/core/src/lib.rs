//! Spatial quantile regression with positional-encoder graph neural networks.

pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod spatial;
pub mod training;

pub use autodiff::{ParamStore, Tape, Tensor};
pub use data::{apply_normalization, assign_split, fit_normalization, load_csv, normalize_and_split, CsvSchema, Normalization, SpatialDataset, Split};
pub use error::{Error, Result};
pub use layers::{Activation, GraphLayerKind};
pub use metrics::{CalibrationReport, PredictiveDistribution, QuantilePredictor};
pub use model::{Approach, Checkpoint, Model, ModelInputs, ModelSpec, TauActivation, TauInjection};
pub use spatial::{build_knn_graph, CoordinateSet, LatLon, SpatialGraph};

/// The seeded generator used for every stochastic step.
pub type SeededRng = rand_chacha::ChaCha8Rng;
pub use training::{train, TrainConfig, TrainOutcome};

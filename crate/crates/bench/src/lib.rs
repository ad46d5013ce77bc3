//! Shared fixtures for the criterion benchmarks in `benches/`.

use pegqnn_core::data::{synth_gaussian_field, SynthParams};
use pegqnn_core::{normalize_and_split, SpatialDataset};

/// A normalized synthetic dataset of `n` rows, split 80/10/10.
pub fn synthetic(n: usize, seed: u64) -> SpatialDataset {
    let field = synth_gaussian_field(n, seed, &SynthParams::default()).expect("synthetic field");
    normalize_and_split(field.dataset, (0.8, 0.1, 0.1), seed).expect("split")
}

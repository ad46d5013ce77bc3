//! Positional encoder: a fixed multi-scale sinusoidal transform of
//! normalized coordinates followed by a trainable fully-connected network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer};

const RANGE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidalConfig {
    /// Shortest wavelength, in normalized-coordinate units.
    pub sigma_min: f64,
    /// Longest wavelength.
    pub sigma_max: f64,
    pub num_scales: usize,
}

impl Default for SinusoidalConfig {
    fn default() -> Self {
        Self {
            sigma_min: 1e-2,
            sigma_max: 1.0,
            num_scales: 8,
        }
    }
}

impl SinusoidalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) || self.num_scales == 0 {
            return Err(Error::Config(format!(
                "sinusoidal config needs 0 < sigma_min < sigma_max and num_scales >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Two spatial dimensions × {sin, cos} × scales.
    pub fn output_width(&self) -> usize {
        4 * self.num_scales
    }

    /// Geometrically spaced wavelengths from `sigma_min` to `sigma_max`.
    pub fn scales(&self) -> Vec<f64> {
        let s = self.num_scales;
        if s == 1 {
            return vec![self.sigma_min];
        }
        let ratio = self.sigma_max / self.sigma_min;
        (0..s)
            .map(|i| self.sigma_min * ratio.powf(i as f64 / (s - 1) as f64))
            .collect()
    }
}

/// Per-row `[sin(v₁/g₀), cos(v₁/g₀), …, sin(v₂/g₀), cos(v₂/g₀), …]` for the
/// two coordinate columns of `coords` (already normalized to `[-1, 1]`).
pub fn sinusoidal_transform(coords: &Tensor, cfg: &SinusoidalConfig) -> Result<Tensor> {
    cfg.validate()?;
    if coords.cols() != 2 {
        return Err(Error::Shape {
            op: "sinusoidal_transform",
            left: coords.shape(),
            right: (coords.rows(), 2),
        });
    }
    if let Some(v) = coords
        .data()
        .iter()
        .find(|v| !(v.abs() <= 1.0 + RANGE_SLACK))
    {
        return Err(Error::Validation(format!(
            "coordinate value {v} is not normalized to [-1, 1]"
        )));
    }
    let scales = cfg.scales();
    let width = cfg.output_width();
    let mut out = Tensor::zeros(coords.rows(), width);
    for r in 0..coords.rows() {
        let mut c = 0;
        for dim in 0..2 {
            let v = coords.get(r, dim);
            for g in &scales {
                let (s, co) = (v / g).sin_cos();
                out.set(r, c, s);
                out.set(r, c + 1, co);
                c += 2;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PositionalEncoder {
    pub sinusoidal: SinusoidalConfig,
    pub network: Vec<DenseLayer>,
    pub output_dim: usize,
}

impl PositionalEncoder {
    /// Sinusoidal features → `hidden` (relu) → `output_dim` (linear).
    pub fn new(
        store: &mut ParamStore,
        sinusoidal: SinusoidalConfig,
        hidden: usize,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        sinusoidal.validate()?;
        let input = sinusoidal.output_width();
        let network = vec![
            DenseLayer::new(store, "pe.hidden", input, hidden, Activation::Relu, rng),
            DenseLayer::new(store, "pe.out", hidden, output_dim, Activation::Identity, rng),
        ];
        Ok(Self {
            sinusoidal,
            network,
            output_dim,
        })
    }

    pub fn parameter_count(sinusoidal: &SinusoidalConfig, hidden: usize, output_dim: usize) -> usize {
        DenseLayer::parameter_count(sinusoidal.output_width(), hidden)
            + DenseLayer::parameter_count(hidden, output_dim)
    }

    /// Spatial embedding `n × output_dim` for normalized coordinates `n × 2`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, coords: &Tensor) -> Result<Var> {
        let features = sinusoidal_transform(coords, &self.sinusoidal)?;
        let mut h = tape.constant(features);
        for layer in &self.network {
            h = layer.forward(tape, store, h)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeededRng;
    use rand::SeedableRng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn origin_gives_zero_sines_unit_cosines() {
        let cfg = SinusoidalConfig::default();
        let out = sinusoidal_transform(&Tensor::zeros(3, 2), &cfg).unwrap();
        assert_eq!(out.cols(), 32);
        for r in 0..3 {
            for c in 0..out.cols() {
                assert_eq!(out.get(r, c), if c % 2 == 0 { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn quarter_turn() {
        // π/2 itself lies outside [-1, 1]; halve both the value and the wavelength
        let cfg = SinusoidalConfig {
            sigma_min: 0.5,
            sigma_max: 2.0,
            num_scales: 1,
        };
        let out = sinusoidal_transform(&Tensor::row(&[FRAC_PI_2 / 2.0, 0.0]), &cfg).unwrap();
        assert!((out.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(out.get(0, 1).abs() < 1e-15);
    }

    #[test]
    fn widths_and_validation() {
        let cfg = SinusoidalConfig {
            num_scales: 8,
            ..Default::default()
        };
        assert_eq!(cfg.output_width(), 32);
        assert!(sinusoidal_transform(&Tensor::row(&[1.5, 0.0]), &cfg).is_err());
        assert!(sinusoidal_transform(&Tensor::row(&[1.0 + 1e-12, -1.0]), &cfg).is_ok());
        let bad = SinusoidalConfig {
            sigma_min: 1.0,
            sigma_max: 0.5,
            num_scales: 2,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scales_are_geometric() {
        let cfg = SinusoidalConfig {
            sigma_min: 0.01,
            sigma_max: 1.0,
            num_scales: 3,
        };
        let s = cfg.scales();
        assert!((s[0] - 0.01).abs() < 1e-15);
        assert!((s[1] - 0.1).abs() < 1e-15);
        assert!((s[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn encode_shape_and_determinism() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::seed_from_u64(1);
        let pe = PositionalEncoder::new(&mut store, SinusoidalConfig::default(), 64, 16, &mut rng).unwrap();
        let coords = Tensor::new(32, 2, (0..64).map(|i| (i as f64 / 32.0) - 1.0).collect()).unwrap();
        let mut tape = Tape::new();
        let e = pe.encode(&mut tape, &store, &coords).unwrap();
        assert_eq!(tape.value(e).shape(), (32, 16));

        let same = Tensor::from_rows(&[vec![0.3, -0.2], vec![0.3, -0.2]]).unwrap();
        let e = pe.encode(&mut tape, &store, &same).unwrap();
        let v = tape.value(e);
        assert_eq!(v.row_slice(0), v.row_slice(1));
        assert_eq!(
            store.count(),
            PositionalEncoder::parameter_count(&SinusoidalConfig::default(), 64, 16)
        );
    }
}

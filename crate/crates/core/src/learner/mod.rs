//! Depth predictor and velocity head trained from binary event masks.
//!
//! The predictor is a small encoder, a gated convolutional recurrent cell on
//! the bottleneck and a two-stage decoder with bilinear skip connections. The
//! velocity head reads the predicted inverse depth and outputs a lateral
//! command in (-1, 1). All passes are hand-written in `f64`.

mod checkpoint;
pub mod layers;
mod net;
mod train;

pub use checkpoint::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use net::{
    backward, forward, objective, Gradient, Group, LayoutEntry, ModelParams, Prediction, RecurrentState, StepOutput,
};
pub use train::{train, EpochLoss, Sample, Trajectory, TrainReport};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Network shape. Channel counts and sizes are free; the input must be a
/// multiple of 4 in both dimensions because the encoder halves it twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub enc1_channels: usize,
    pub enc2_channels: usize,
    pub recurrent: bool,
    pub dec_channels: usize,
    pub head_channels: usize,
    /// Column bands the head averages over. Lateral position survives pooling.
    pub head_bins: usize,
    pub head_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_width: 64,
            input_height: 64,
            enc1_channels: 8,
            enc2_channels: 16,
            recurrent: true,
            dec_channels: 8,
            head_channels: 4,
            head_bins: 8,
            head_hidden: 16,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.input_height == 0 || self.input_width % 4 != 0 || self.input_height % 4 != 0 {
            return Err(Error::Validation(format!(
                "input {}x{} must be a positive multiple of 4",
                self.input_width, self.input_height
            )));
        }
        let widths = [
            self.enc1_channels,
            self.enc2_channels,
            self.dec_channels,
            self.head_channels,
            self.head_bins,
            self.head_hidden,
        ];
        if widths.iter().any(|&c| c == 0) {
            return Err(Error::Validation("layer widths must be positive".into()));
        }
        if self.head_bins > self.input_width {
            return Err(Error::Validation(format!(
                "{} head bins exceed input width {}",
                self.head_bins, self.input_width
            )));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_width * self.input_height
    }
}

/// Which parts of the graph each loss term trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Both losses through the shared graph.
    Joint,
    /// Depth loss trains the predictor; the head sees ground-truth depth.
    Independent,
    /// Velocity loss only, through the whole graph.
    NoDepth,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Joint, Mode::Independent, Mode::NoDepth];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::Independent => "independent",
            Mode::NoDepth => "no_depth",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown training mode '{}'", s)))
    }
}

/// Weights on the depth and velocity loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_p: f64,
    pub w_v: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_p: 1.0, w_v: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Trajectories stepped together; one update per time step.
    pub batch_size: usize,
    pub epochs: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Global gradient-norm clip, if any.
    pub grad_clip: Option<f64>,
    /// Per-trajectory probability of a left-right flip each epoch.
    pub flip_prob: f64,
    pub noise_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 4,
            epochs: 10,
            mode: Mode::Joint,
            seed: 0,
            grad_clip: Some(1.0),
            flip_prob: 0.5,
            noise_fraction: crate::events::DEFAULT_NOISE_FRACTION,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        if !(w.w_p >= 0.0 && w.w_v >= 0.0 && w.w_p.is_finite() && w.w_v.is_finite()) {
            return Err(Error::Validation(format!("loss weights ({}, {}) must be >= 0", w.w_p, w.w_v)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Validation(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Validation(format!("gradient clip {} must be > 0", c)));
            }
        }
        crate::events::AugmentSpec {
            noise_flip_fraction: self.noise_fraction,
            ..Default::default()
        }
        .validate()
    }
}

/// Inverse-depth-weighted squared error, averaged over pixels.
pub fn loss_perception(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape(gt.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Validation("empty depth map".into()));
    }
    let mut s = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        if !(g > 0.0) {
            return Err(Error::Validation(format!("ground-truth depth {} must be > 0", g)));
        }
        s += (g - p) * (g - p) / g;
    }
    Ok(s / gt.len() as f64)
}

/// Squared error on the lateral command.
pub fn loss_velocity(pred: f64, label: f64) -> f64 {
    (pred - label) * (pred - label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(loss_perception(&[3.0], &[2.0]).unwrap(), 0.5);
        assert_eq!(loss_perception(&[1.0, 4.0], &[1.0, 4.0]).unwrap(), 0.0);
        assert_eq!(loss_velocity(0.5, -0.5), 1.0);
        assert_eq!(loss_velocity(0.3, 0.3), 0.0);
        let w = LossWeights::default();
        assert_eq!(w.w_p * 0.5 + w.w_v * 1.0, 10.5);
    }

    #[test]
    fn perception_weighting_ratio() {
        // Doubling an error of 0.5 at 1 m vs at 4 m.
        let d1 = loss_perception(&[2.0, 4.0], &[1.0, 4.0]).unwrap() - loss_perception(&[1.5, 4.0], &[1.0, 4.0]).unwrap();
        let d4 = loss_perception(&[1.0, 5.0], &[1.0, 4.0]).unwrap() - loss_perception(&[1.0, 4.5], &[1.0, 4.0]).unwrap();
        assert!((d1 / d4 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn perception_rejects_bad_inputs() {
        assert!(matches!(loss_perception(&[1.0], &[0.0]), Err(Error::Validation(_))));
        assert!(matches!(loss_perception(&[1.0], &[-1.0]), Err(Error::Validation(_))));
        assert!(matches!(loss_perception(&[1.0, 2.0], &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig::default().validate().is_ok());
        for bad in [
            NetConfig {
                input_width: 30,
                ..NetConfig::default()
            },
            NetConfig {
                head_hidden: 0,
                ..NetConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(TrainConfig::default().validate().is_ok());
        let neg = TrainConfig {
            weights: LossWeights { w_p: -1.0, w_v: 1.0 },
            ..TrainConfig::default()
        };
        assert!(neg.validate().is_err());
        assert_eq!("no_depth".parse::<Mode>().unwrap(), Mode::NoDepth);
        assert!("both".parse::<Mode>().is_err());
    }
}

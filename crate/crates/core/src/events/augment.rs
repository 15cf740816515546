use super::Bem;
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Training-time perturbations of a binary event mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    /// Mirror columns and negate the lateral label.
    pub flip_lr: bool,
    /// Roll-like rotation about the image center, radians.
    pub rotation: f64,
    /// Fraction of pixels whose bit is flipped.
    pub noise_flip_fraction: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            flip_lr: false,
            rotation: 0.0,
            noise_flip_fraction: 0.0,
        }
    }
}

pub const MAX_ROTATION: f64 = 0.35;
pub const MAX_NOISE_FRACTION: f64 = 0.1;
pub const DEFAULT_NOISE_FRACTION: f64 = 0.02;

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rotation.abs() <= MAX_ROTATION) {
            return Err(Error::Validation(format!(
                "rotation {} outside [-{}, {}]",
                self.rotation, MAX_ROTATION, MAX_ROTATION
            )));
        }
        if !(0.0..=MAX_NOISE_FRACTION).contains(&self.noise_flip_fraction) {
            return Err(Error::Validation(format!(
                "noise fraction {} outside [0, {}]",
                self.noise_flip_fraction, MAX_NOISE_FRACTION
            )));
        }
        Ok(())
    }
}

/// Applies rotation, then the left-right flip, then bit-flip noise.
///
/// Rotation samples the nearest source pixel; pixels rotated in from outside
/// the sensor are 0. Noise flips exactly `round(fraction * width * height)`
/// distinct pixels chosen by `seed`.
pub fn augment(bem: &Bem, label_v_y: f64, spec: &AugmentSpec, seed: u64) -> Result<(Bem, f64)> {
    spec.validate()?;
    let mut out = if spec.rotation != 0.0 {
        rotate_nearest(bem, spec.rotation)
    } else {
        bem.clone()
    };
    let mut label = label_v_y;
    if spec.flip_lr {
        out = out.flip_lr();
        label = -label;
    }
    let n = out.mask.len();
    let flips = (spec.noise_flip_fraction * n as f64).round() as usize;
    if flips > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in rand::seq::index::sample(&mut rng, n, flips) {
            out.mask[i] ^= 1;
        }
    }
    Ok((out, label))
}

fn rotate_nearest(bem: &Bem, angle: f64) -> Bem {
    let (w, h) = (bem.width, bem.height);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (s, c) = angle.sin_cos();
    let mut out = Bem::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // Inverse rotation maps each output pixel back to its source.
            let sx = (cx + c * dx + s * dy).round();
            let sy = (cy - s * dx + c * dy).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out.mask[y * w + x] = bem.mask[sy as usize * w + sx as usize];
            }
        }
    }
    out
}

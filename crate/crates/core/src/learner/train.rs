use super::net::{backward, Gradient, ModelParams, RecurrentState, StepOutput};
use super::{NetConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::events::{augment, AugmentSpec};
use crate::events::Bem;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One supervised frame: input mask, ground-truth depth on the same grid and
/// the expert's lateral command.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub bem: Bem,
    pub depth: Vec<f64>,
    pub v_y: f64,
}

/// Frames of one flight in time order. The recurrent state is threaded
/// through a trajectory and reset between trajectories.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_p: f64,
    pub l_v: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    pub history: Vec<EpochLoss>,
}

fn flip_grid(v: &[f64], w: usize) -> Vec<f64> {
    v.chunks(w).flat_map(|row| row.iter().rev().copied()).collect()
}

fn check_dataset(data: &[Trajectory], cfg: &NetConfig) -> Result<()> {
    if data.iter().all(|t| t.samples.is_empty()) {
        return Err(Error::Validation("training set has no samples".into()));
    }
    for (i, s) in data.iter().flat_map(|t| &t.samples).enumerate() {
        if s.bem.width != cfg.input_width || s.bem.height != cfg.input_height {
            return Err(Error::shape(
                format!("{}x{} mask", cfg.input_width, cfg.input_height),
                format!("{}x{} in sample {}", s.bem.width, s.bem.height, i),
            ));
        }
        if s.depth.len() != cfg.input_len() {
            return Err(Error::shape(cfg.input_len(), s.depth.len()));
        }
    }
    Ok(())
}

/// Minibatch SGD with momentum.
///
/// Each epoch shuffles the trajectories and groups them into batches of
/// `batch_size`; a batch advances one time step per update, averaging the
/// gradients of the trajectories still running. Flip and noise augmentation
/// are drawn per trajectory per epoch from the seeded generator.
pub fn train(data: &[Trajectory], net_cfg: &NetConfig, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    net_cfg.validate()?;
    check_dataset(data, net_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(net_cfg, rng.gen())?;
    let mut velocity = Gradient::zeros_like(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let aug: Vec<(bool, u64)> = (0..data.len()).map(|_| (rng.gen_bool(cfg.flip_prob), rng.gen())).collect();
        let (mut sum_p, mut sum_v, mut sum_obj, mut count) = (0.0, 0.0, 0.0, 0usize);

        for batch in order.chunks(cfg.batch_size) {
            let mut states = vec![RecurrentState::zeros(); batch.len()];
            let steps = batch.iter().map(|&i| data[i].samples.len()).max().unwrap_or(0);
            for t in 0..steps {
                let active: Vec<usize> = (0..batch.len()).filter(|&k| t < data[batch[k]].samples.len()).collect();
                let outputs: Vec<Result<StepOutput>> = active
                    .par_iter()
                    .map(|&k| {
                        let traj = batch[k];
                        let s = &data[traj].samples[t];
                        let (flip, noise_seed) = aug[traj];
                        let spec = AugmentSpec {
                            flip_lr: flip,
                            rotation: 0.0,
                            noise_flip_fraction: cfg.noise_fraction,
                        };
                        let (bem, label) = augment(&s.bem, s.v_y, &spec, noise_seed.wrapping_add(t as u64))?;
                        let depth = if flip { flip_grid(&s.depth, s.bem.width) } else { s.depth.clone() };
                        backward(&params, &bem, &depth, label, &states[k], cfg.mode, cfg.weights)
                    })
                    .collect();
                let mut grad = Gradient::zeros_like(&params);
                for (&k, out) in active.iter().zip(outputs) {
                    let out = out?;
                    if !out.objective.is_finite() {
                        return Err(Error::Divergence(format!(
                            "non-finite loss at epoch {}, step {} (L_p {}, L_v {})",
                            epoch, t, out.l_p, out.l_v
                        )));
                    }
                    sum_p += out.l_p;
                    sum_v += out.l_v;
                    sum_obj += out.objective;
                    count += 1;
                    grad.add_assign(&out.gradient);
                    states[k] = out.state;
                }
                grad.scale(1.0 / active.len() as f64);
                if let Some(clip) = cfg.grad_clip {
                    let n = grad.norm();
                    if n > clip {
                        grad.scale(clip / n);
                    }
                }
                velocity.scale(cfg.momentum);
                velocity.add_assign(&grad);
                for (p, v) in params.theta.iter_mut().zip(&velocity.theta) {
                    *p -= cfg.learning_rate * v;
                }
                for (p, v) in params.phi.iter_mut().zip(&velocity.phi) {
                    *p -= cfg.learning_rate * v;
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {}", epoch)));
        }
        let n = count.max(1) as f64;
        let e = EpochLoss {
            epoch,
            l_p: sum_p / n,
            l_v: sum_v / n,
            objective: sum_obj / n,
        };
        log::info!(
            "{} epoch {}: L_p {:.4} L_v {:.4} objective {:.4}",
            cfg.mode.name(),
            epoch,
            e.l_p,
            e.l_v,
            e.objective
        );
        history.push(e);
    }
    Ok(TrainReport { params, history })
}

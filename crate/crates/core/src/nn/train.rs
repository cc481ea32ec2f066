//! SGD training loop: momentum, weight decay, milestone LR schedule, seeded
//! per-epoch shuffling, and a parameter snapshot at the difficulty epoch.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_labels, loss_and_grads_into, BatchScratch, Network, ParamSet};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::testbed::Dataset;

/// Full SGD recipe. The default is a shape-preserving reduction of the usual
/// 160-epoch CIFAR schedule: 60 epochs, lr 0.1 dropping by 10x at epochs 30
/// and 45, momentum 0.9, weight decay 1e-4, batch 64, difficulty snapshot
/// after epoch 6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Nonnegative; zero is allowed as a frozen-network diagnostic.
    pub lr_initial: f32,
    /// Epoch counts after which the learning rate drops: a milestone of 30
    /// means the 31st epoch runs at the dropped rate.
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
    /// Number of completed epochs after which the difficulty snapshot is
    /// captured; 0 snapshots the initial parameters.
    pub difficulty_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            lr_initial: 0.1,
            lr_milestones: vec![30, 45],
            lr_factor: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            difficulty_epoch: 6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr_initial >= 0.0) || !self.lr_initial.is_finite() {
            return Err(Error::invalid("lr_initial must be finite and >= 0"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::invalid("lr_factor must be in (0, 1]"));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid("weight_decay must be finite and >= 0"));
        }
        if !self
            .lr_milestones
            .windows(2)
            .all(|w| w[0] < w[1])
        {
            return Err(Error::invalid("lr_milestones must be strictly increasing"));
        }
        if let Some(&m) = self.lr_milestones.last() {
            if m >= self.epochs {
                return Err(Error::invalid("lr_milestones must be < epochs"));
            }
        }
        if self.epochs == 0 {
            if self.difficulty_epoch != 0 {
                return Err(Error::invalid(
                    "difficulty_epoch must be 0 when epochs is 0",
                ));
            }
        } else if self.difficulty_epoch >= self.epochs {
            return Err(Error::invalid("difficulty_epoch must be < epochs"));
        }
        Ok(())
    }

    /// Learning rate for the epoch with 0-based index `epoch_idx`.
    pub fn lr_at(&self, epoch_idx: usize) -> f32 {
        let drops = self.lr_milestones.iter().filter(|&&m| m <= epoch_idx).count();
        self.lr_initial * self.lr_factor.powi(drops as i32)
    }
}

/// Per-epoch callback context; `epoch` counts completed epochs (1-based).
pub struct EpochCtx<'a> {
    pub epoch: usize,
    pub mean_loss: f64,
    pub net: &'a Network,
}

pub struct TrainOutcome {
    pub net: Network,
    /// Parameters as they stood after `difficulty_epoch` completed epochs.
    pub snapshot: Network,
    pub epoch_losses: Vec<f64>,
}

/// Trains `initial` on `data` under `cfg`. Deterministic: the same initial
/// network, dataset, and config reproduce the parameter trajectory bit for
/// bit. The optional hook runs once per epoch with the current network.
pub fn train(
    initial: Network,
    data: &Dataset,
    cfg: &TrainConfig,
    mut hook: Option<&mut dyn FnMut(&EpochCtx)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() == 0 {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if data.feature_dim() != initial.arch().input {
        return Err(Error::ShapeMismatch(format!(
            "dataset feature dim {} != network input {}",
            data.feature_dim(),
            initial.arch().input
        )));
    }
    if data.classes() != initial.arch().classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset classes {} != network classes {}",
            data.classes(),
            initial.arch().classes
        )));
    }

    let n = data.len();
    let dim = data.feature_dim();
    let mut net = initial;
    // Holds the initial parameters until the difficulty epoch completes;
    // difficulty_epoch == 0 means the snapshot IS the initial network.
    let mut snapshot = net.clone();
    let mut velocity = ParamSet::<f32>::zeros(net.arch());
    let mut scratch = BatchScratch::for_params(net.params());
    let mut feats = vec![0.0f32; cfg.batch_size * dim];
    let mut labels: Vec<usize> = Vec::with_capacity(cfg.batch_size);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch_idx in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch_idx);
        let mut shuffle_rng = rng::stream(cfg.seed, Domain::Shuffle, epoch_idx as u64);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let rows = chunk.len();
            let batch = &mut feats[..rows * dim];
            data.fill_normalized_rows(chunk, batch);
            labels.clear();
            labels.extend(chunk.iter().map(|&p| data.label_at(p)));
            check_labels(&labels, rows, net.arch().classes)?;
            let loss = loss_and_grads_into(
                net.params(),
                batch,
                rows,
                &labels,
                cfg.weight_decay,
                &mut scratch,
            );
            loss_sum += loss * rows as f64;
            sgd_step(net.params_mut(), &scratch.grads, &mut velocity, lr, cfg.momentum);
        }
        let mean_loss = loss_sum / n as f64;
        epoch_losses.push(mean_loss);

        if epoch_idx + 1 == cfg.difficulty_epoch {
            snapshot = net.clone();
        }
        if let Some(ref mut h) = hook {
            h(&EpochCtx {
                epoch: epoch_idx + 1,
                mean_loss,
                net: &net,
            });
        }
    }

    Ok(TrainOutcome {
        net,
        snapshot,
        epoch_losses,
    })
}

/// Builds a fresh seeded network for `cfg.seed` and trains it.
pub fn train_from_seed(
    arch: &super::Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    hook: Option<&mut dyn FnMut(&EpochCtx)>,
) -> Result<TrainOutcome> {
    let net = Network::seeded(arch.clone(), cfg.seed)?;
    train(net, data, cfg, hook)
}

fn sgd_step(
    params: &mut ParamSet<f32>,
    grads: &ParamSet<f32>,
    velocity: &mut ParamSet<f32>,
    lr: f32,
    momentum: f32,
) {
    for ((p, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
    {
        update_tensor(&mut p.w, &g.w, &mut v.w, lr, momentum);
        update_tensor(&mut p.b, &g.b, &mut v.b, lr, momentum);
    }
}

fn update_tensor(p: &mut [f32], g: &[f32], v: &mut [f32], lr: f32, momentum: f32) {
    for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = momentum * *vi + gi;
        *pi -= lr * *vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_applies_milestones() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.1);
        assert_eq!(cfg.lr_at(29), 0.1);
        assert!((cfg.lr_at(30) - 0.01).abs() < 1e-9);
        assert!((cfg.lr_at(44) - 0.01).abs() < 1e-9);
        assert!((cfg.lr_at(45) - 0.001).abs() < 1e-9);
        assert!((cfg.lr_at(59) - 0.001).abs() < 1e-9);
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut cfg = TrainConfig::default();
        cfg.difficulty_epoch = 60;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::default();
        cfg.lr_milestones = vec![10, 10];
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::default();
        cfg.lr_milestones = vec![10, 70];
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::default();
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig {
            epochs: 0,
            difficulty_epoch: 0,
            lr_milestones: vec![],
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }
}

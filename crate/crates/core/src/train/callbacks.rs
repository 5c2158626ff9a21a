//! Early stopping and learning-rate reduction on a validation-loss plateau.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub lr_plateau_patience: usize,
    pub lr_factor: f64,
    /// Floor for the reduced learning rate.
    pub min_lr: f64,
    pub learning_rate: f64,
    pub restore_best: bool,
    /// Batch size of infer-mode passes (validation, evaluation).
    pub eval_batch_size: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            batch_size: 6,
            early_stop_patience: 20,
            lr_plateau_patience: 6,
            lr_factor: 0.1,
            min_lr: 0.0,
            learning_rate: 1e-3,
            restore_best: true,
            eval_batch_size: 16,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("train: epochs and batch sizes must be positive".into()));
        }
        if self.lr_plateau_patience == 0 || self.early_stop_patience <= 2 * self.lr_plateau_patience {
            return Err(Error::Config(format!(
                "train: early_stop_patience ({}) must exceed twice lr_plateau_patience ({})",
                self.early_stop_patience, self.lr_plateau_patience
            )));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!("train: lr_factor {} outside (0, 1)", self.lr_factor)));
        }
        if !(self.learning_rate > 0.0) || !(self.min_lr >= 0.0) {
            return Err(Error::Config("train: learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// What the callbacks decided after one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochDecision {
    pub improved: bool,
    /// New learning rate if it was reduced this epoch.
    pub lr_drop: Option<f64>,
    pub stop: bool,
}

/// Callback state over epochs numbered from 1.
#[derive(Clone, Debug)]
pub struct Callbacks {
    early_stop_patience: usize,
    plateau_patience: usize,
    factor: f64,
    min_lr: f64,
    lr: f64,
    best: f64,
    best_epoch: usize,
    stop_wait: usize,
    lr_wait: usize,
    epoch: usize,
    max_epochs: usize,
}

impl Callbacks {
    pub fn new(cfg: &TrainConfig) -> Self {
        Callbacks {
            early_stop_patience: cfg.early_stop_patience,
            plateau_patience: cfg.lr_plateau_patience,
            factor: cfg.lr_factor,
            min_lr: cfg.min_lr,
            lr: cfg.learning_rate,
            best: f64::INFINITY,
            best_epoch: 0,
            stop_wait: 0,
            lr_wait: 0,
            epoch: 0,
            max_epochs: cfg.max_epochs,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// Feeds the validation loss of the next epoch. Improvement means strictly
    /// below the best loss so far.
    pub fn observe(&mut self, val_loss: f64) -> EpochDecision {
        self.epoch += 1;
        let improved = val_loss < self.best;
        let mut lr_drop = None;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.stop_wait = 0;
            self.lr_wait = 0;
        } else {
            self.stop_wait += 1;
            self.lr_wait += 1;
            if self.lr_wait >= self.plateau_patience {
                self.lr_wait = 0;
                let next = (self.lr * self.factor).max(self.min_lr);
                if next < self.lr {
                    self.lr = next;
                    lr_drop = Some(next);
                }
            }
        }
        let stop = self.stop_wait >= self.early_stop_patience || self.epoch >= self.max_epochs;
        EpochDecision {
            improved,
            lr_drop,
            stop,
        }
    }
}

/// Outcome of running the callbacks over a whole scripted loss sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub lr_drop_epochs: Vec<usize>,
    pub best_epoch: usize,
}

pub fn simulate(cfg: &TrainConfig, losses: &[f64]) -> Schedule {
    let mut cb = Callbacks::new(cfg);
    let mut drops = Vec::new();
    let mut epochs_run = 0;
    let mut stopped_early = false;
    for (i, &l) in losses.iter().enumerate() {
        let d = cb.observe(l);
        epochs_run = i + 1;
        if d.lr_drop.is_some() {
            drops.push(epochs_run);
        }
        if d.stop {
            stopped_early = epochs_run < cfg.max_epochs;
            break;
        }
    }
    Schedule {
        epochs_run,
        stopped_early,
        lr_drop_epochs: drops,
        best_epoch: cb.best_epoch(),
    }
}

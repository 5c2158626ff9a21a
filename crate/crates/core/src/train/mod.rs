//! Splitting, the training protocol with its callbacks, and evaluation.

pub mod callbacks;
pub mod metrics;
pub mod split;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use callbacks::{simulate, Callbacks, EpochDecision, Schedule, TrainConfig};
pub use metrics::{evaluate_scores, Confusion, MetricsReport, Thresholds};
pub use split::{split_train_test, stratified_kfold, FoldPlan, Labeled};

use crate::augment::{self, AugmentConfig};
use crate::error::{Error, Result};
use crate::imaging::{load_image, Image};
use crate::manifest::{Manifest, Record};
use crate::model::Session;
use crate::ops::Mode;
use crate::optim::{AdamConfig, OptimizerState};
use crate::rng::{key, stream, tag};

/// A labeled image held in memory.
#[derive(Clone, Debug)]
pub struct Item {
    pub id: String,
    pub parent: String,
    pub label: u8,
    pub image: Image,
}

impl Labeled for Item {
    fn id(&self) -> &str {
        &self.id
    }
    fn group(&self) -> &str {
        &self.parent
    }
    fn label(&self) -> u8 {
        self.label
    }
}

impl Item {
    pub fn load(manifest: &Manifest, record: &Record) -> Result<Self> {
        Ok(Item {
            id: record.id.clone(),
            parent: record.parent_id.clone(),
            label: record.label,
            image: load_image(&manifest.resolve(&record.path))?,
        })
    }
}

/// Loads every active record of `manifest`.
pub fn load_items(manifest: &Manifest) -> Result<Vec<Item>> {
    manifest.active().map(|r| Item::load(manifest, r)).collect()
}

/// One line of a training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

fn batch_input(images: &[&Image]) -> Result<crate::Tensor<f32>> {
    Image::batch_tensor(images)
}

/// Infer-mode probabilities for `items`, in order.
pub fn predict_items(session: &mut Session<f32>, items: &[&Item], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch.max(1)) {
        let images: Vec<&Image> = chunk.iter().map(|it| &it.image).collect();
        let probs = session.predict(&batch_input(&images)?)?;
        out.extend(probs.iter().map(|&p| p as f64));
    }
    Ok(out)
}

fn labels_of(items: &[&Item]) -> Vec<u8> {
    items.iter().map(|it| it.label).collect()
}

/// Trains `session` with mini-batch Adam, validation-loss callbacks and
/// restoration of the best epoch's weights. `on_epoch` sees each history line
/// as it is produced.
pub fn train_model(
    session: &mut Session<f32>,
    train: &[&Item],
    val: &[&Item],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    aug.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Argument("training and validation sets must be non-empty".into()));
    }
    let val_ids: std::collections::HashSet<&str> = val.iter().map(|it| it.id.as_str()).collect();
    if let Some(it) = train.iter().find(|it| val_ids.contains(it.id.as_str())) {
        return Err(Error::Argument(format!("sample {} is in both training and validation sets", it.id)));
    }
    let mut opt = OptimizerState::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    })?;
    let mut callbacks = Callbacks::new(cfg);
    let mut best: Option<Session<f32>> = None;
    let mut history = Vec::new();
    let val_labels = labels_of(val);
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = opt.learning_rate();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(seed, &[tag::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0f64;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<Image> = chunk
                .iter()
                .map(|&i| {
                    let it = train[i];
                    if cfg.augment {
                        let mut rng = stream(seed, &[tag::AUGMENT, key(&it.id), epoch as u64]);
                        augment::augment(&it.image, it.label, aug, &mut rng).0
                    } else {
                        it.image.clone()
                    }
                })
                .collect();
            let refs: Vec<&Image> = augmented.iter().collect();
            let labels: Vec<f32> = chunk.iter().map(|&i| train[i].label as f32).collect();
            let mut fwd = session.forward(&batch_input(&refs)?, Mode::Train)?;
            let (loss, node) = fwd.bce_loss(&labels)?;
            if !loss.is_finite() {
                if let Some(b) = best.take() {
                    *session = b;
                }
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            let grads = fwd.tape.backward(node)?.into_params();
            session.apply(&mut opt, &grads)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_scores = predict_items(session, val, cfg.eval_batch_size)?;
        let val_loss = metrics::mean_bce(&val_scores, &val_labels);
        if !val_loss.is_finite() {
            if let Some(b) = best.take() {
                *session = b;
            }
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        let decision = callbacks.observe(val_loss);
        if decision.improved && cfg.restore_best {
            best = Some(session.clone());
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            improved: decision.improved,
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.1e}{}",
            if decision.improved { " *" } else { "" }
        );
        on_epoch(&record);
        history.push(record);
        if let Some(next) = decision.lr_drop {
            opt.set_learning_rate(next)?;
        }
        if decision.stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    if let Some(b) = best {
        *session = b;
    }
    Ok(TrainOutcome {
        epochs_run: history.len(),
        history,
        best_epoch: callbacks.best_epoch(),
        best_val_loss: callbacks.best_loss(),
        stopped_early,
    })
}

/// Scores `items` with `session` and computes the metric suite.
pub fn evaluate_model(
    session: &mut Session<f32>,
    items: &[&Item],
    thresholds: &Thresholds,
    batch: usize,
) -> Result<(MetricsReport, Vec<f64>)> {
    if items.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let scores = predict_items(session, items, batch)?;
    let report = evaluate_scores(&scores, &labels_of(items), thresholds)?;
    Ok((report, scores))
}

/// Writes history lines as JSON, one per line, after a header line.
pub fn history_jsonl(header: &impl Serialize, history: &[EpochRecord]) -> Result<String> {
    let mut out = serde_json::to_string(header).map_err(|e| Error::Data(e.to_string()))?;
    out.push('\n');
    for r in history {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

//! NoDR/NPDR screening: a segmentation network plus a pooled classification
//! head, trained with label-smoothed cross-entropy, either from a segmentation
//! checkpoint or from scratch.

use std::path::PathBuf;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{BestMetric, Checkpoint};
use crate::data::{stack_images, FundusSample, Split};
use crate::error::{Error, Result};
use crate::losses::{screening_ce, smooth_label_batch};
use crate::metrics::ScreeningMetrics;
use crate::model::Lanet;
use crate::optim::Optimizer;
use crate::training::config::ExperimentConfig;
use crate::training::dataset::Splits;
use crate::training::eval::evaluate;
use crate::training::run::{log_opt, RunDir};
use crate::training::seg::{build_model, epoch_order, load_batch, BEST_CHECKPOINT, LAST_CHECKPOINT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningEpochRecord {
    pub event: String,
    pub epoch: usize,
    pub step: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub val_accuracy: Option<f64>,
    pub val_metrics: Option<ScreeningMetrics>,
}

#[derive(Debug)]
pub struct ScreeningOutcome {
    pub model: Lanet,
    pub history: Vec<ScreeningEpochRecord>,
    pub batch_hashes: Vec<String>,
    /// Parameter names that did not come from the segmentation checkpoint.
    pub head_keys: Vec<String>,
    pub best: Option<BestMetric>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

impl ScreeningOutcome {
    /// First epoch (1-based count) whose validation accuracy reaches `target`.
    pub fn epochs_to_accuracy(&self, target: f64) -> Option<usize> {
        self.history
            .iter()
            .position(|r| r.val_accuracy.is_some_and(|a| a >= target))
            .map(|i| i + 1)
    }
}

/// Builds the screening model and, when a segmentation checkpoint is given,
/// copies every shared weight from it. Returns the model and the names of the
/// parameters that were left at their fresh initialization.
pub fn init_screening_model(cfg: &ExperimentConfig, seg: Option<&Checkpoint>) -> Result<(Lanet, Vec<String>)> {
    let model = build_model(cfg, true)?;
    let Some(ckpt) = seg else {
        let names = model.store().names();
        return Ok((model, names));
    };
    let expected = model.variant().segmentation_only();
    if ckpt.header.variant != expected {
        return Err(Error::Incompatible(format!(
            "segmentation checkpoint is {} / {} at {}px, screening config is {} / {} at {}px",
            ckpt.header.variant.ablation_name(),
            ckpt.header.variant.backbone,
            ckpt.header.variant.input_size,
            expected.ablation_name(),
            expected.backbone,
            expected.input_size
        )));
    }
    let fresh = model.load_shared(&ckpt.weights)?;
    if let Some(bad) = fresh.iter().find(|n| !n.starts_with("screening.")) {
        return Err(Error::Incompatible(format!("checkpoint lacks `{bad}`")));
    }
    Ok((model, fresh))
}

fn labels_of(samples: &[&FundusSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            s.screen_label
                .map(|l| l.index())
                .ok_or_else(|| Error::InvalidValue(format!("sample `{}` has no screening label", s.id)))
        })
        .collect()
}

/// Fine-tunes (or trains from scratch when `seg` is `None`) the screening model
/// for `cfg.screening.epochs` epochs, validating accuracy and AUC every epoch.
pub fn finetune_screening(
    cfg: &ExperimentConfig,
    seg: Option<&Checkpoint>,
    splits: &Splits,
    run: Option<&RunDir>,
) -> Result<ScreeningOutcome> {
    cfg.validate()?;
    let train = splits.require(Split::Train)?;
    let (model, head_keys) = init_screening_model(cfg, seg)?;
    let sc = &cfg.screening;
    let freeze = sc.freeze_encoder;
    let mut opt = Optimizer::new(&sc.optimizer, model.store(), |n| !(freeze && n.starts_with("encoder.")))?;

    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = sc.epochs * per_epoch;
    let ckpt_dir = run.map(|r| r.checkpoint_dir(cfg));
    let mut step = 0;
    let mut lr = sc.optimizer.lr_at(0, total);
    let mut history = Vec::new();
    let mut batch_hashes = Vec::new();
    let mut best: Option<BestMetric> = None;
    let mut best_checkpoint = None;

    for epoch in 0..sc.epochs {
        let mut epoch_loss = 0.0;
        let mut n = 0;
        for idx in epoch_order(train.len(), cfg.seed, epoch).chunks(cfg.batch_size) {
            let (samples, hash) = load_batch(train, idx, cfg, epoch)?;
            let refs: Vec<&FundusSample> = samples.iter().collect();
            let labels = labels_of(&refs)?;
            let x = stack_images(&refs, model.device())?;
            let targets = smooth_label_batch(&labels, &cfg.smoothing, model.dtype(), model.device())?;
            let (_, logits) = model.forward_screening(&x, true)?;
            let loss = screening_ce(&logits, &targets)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { value, epoch, step });
            }
            lr = sc.optimizer.lr_at(step, total);
            opt.step(&loss.backward()?, lr)?;
            epoch_loss += value;
            n += 1;
            step += 1;
            batch_hashes.push(hash);
        }
        let mut record = ScreeningEpochRecord {
            event: "epoch".into(),
            epoch,
            step,
            mean_loss: epoch_loss / n.max(1) as f64,
            lr,
            val_accuracy: None,
            val_metrics: None,
        };
        if !splits.valid.is_empty() {
            let e = evaluate(&model, &splits.valid, &cfg.eval, cfg.batch_size, None)?;
            record.val_accuracy = e.accuracy;
            record.val_metrics = e.report.screening;
            let (name, value) = match (e.report.screening, e.accuracy) {
                (Some(m), _) => ("val_auc", m.auc),
                (None, Some(a)) => ("val_accuracy", a),
                (None, None) => ("val_accuracy", 0.0),
            };
            if best.as_ref().is_none_or(|b| value > b.value) {
                best = Some(BestMetric {
                    name: name.into(),
                    value,
                    epoch,
                });
                if let Some(d) = &ckpt_dir {
                    let p = d.join(BEST_CHECKPOINT);
                    Checkpoint::from_model(&model, &cfg.preprocess, epoch, step, best.clone(), Some(&opt))?.save(&p)?;
                    best_checkpoint = Some(p);
                }
            }
        }
        log::info!(
            "screening epoch {epoch}: loss {:.4}, val accuracy {}",
            record.mean_loss,
            record.val_accuracy.map_or("-".into(), |a| format!("{a:.3}"))
        );
        log_opt(run, &record)?;
        history.push(record);
    }
    let last_checkpoint = match &ckpt_dir {
        Some(d) => {
            let p = d.join(LAST_CHECKPOINT);
            Checkpoint::from_model(&model, &cfg.preprocess, sc.epochs.saturating_sub(1), step, best.clone(), Some(&opt))?
                .save(&p)?;
            Some(p)
        }
        None => None,
    };
    Ok(ScreeningOutcome {
        model,
        history,
        batch_hashes,
        head_keys,
        best,
        best_checkpoint,
        last_checkpoint,
    })
}

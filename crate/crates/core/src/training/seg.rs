//! Segmentation training with deep supervision.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{BestMetric, Checkpoint};
use crate::data::augment::augment;
use crate::data::{sample_seed, stack_images, stack_masks, FundusSample, Split};
use crate::error::{Error, Result};
use crate::lesion::{Lesion, NUM_LESIONS};
use crate::losses::seg_loss_raw;
use crate::model::{Lanet, ModelInit};
use crate::optim::Optimizer;
use crate::training::config::ExperimentConfig;
use crate::training::dataset::{SampleSet, Splits};
use crate::training::eval::{evaluate, hex};
use crate::training::run::{log_opt, RunDir};

pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_CHECKPOINT: &str = "last.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub event: String,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub batch: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEpochRecord {
    pub event: String,
    pub epoch: usize,
    pub step: usize,
    pub mean_loss: f64,
    pub lr: f64,
    /// Validation Dice per lesion (EX, HE, MA, SE) and mAP, when validated.
    pub val_dice: Option<[f64; NUM_LESIONS]>,
    pub val_map: Option<f64>,
}

#[derive(Debug)]
pub struct SegOutcome {
    /// The model after the last step.
    pub model: Lanet,
    pub history: Vec<SegEpochRecord>,
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
    /// Hash of the sample ids and augmentation seeds of every batch, in order.
    pub batch_hashes: Vec<String>,
    pub best: Option<BestMetric>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Samples of one batch with their augmentation applied, plus the batch hash.
pub(crate) fn load_batch(
    set: &SampleSet,
    idx: &[usize],
    cfg: &ExperimentConfig,
    epoch: usize,
) -> Result<(Vec<FundusSample>, String)> {
    let raw = set.get_many(idx)?;
    let mut h = Sha256::new();
    let samples = raw
        .iter()
        .map(|s| {
            let seed = sample_seed(cfg.seed, &s.id, epoch);
            h.update(s.id.as_bytes());
            h.update(seed.to_le_bytes());
            augment(s, seed, &cfg.augment)
        })
        .collect();
    Ok((samples, hex(&h.finalize()[..8])))
}

/// Seeded visiting order of `n` samples in `epoch`.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

pub(crate) fn build_model(cfg: &ExperimentConfig, screening_head: bool) -> Result<Lanet> {
    let variant = cfg.variant.clone().with_screening_head(screening_head);
    let model = Lanet::new(
        &variant,
        &ModelInit {
            seed: cfg.seed,
            ..Default::default()
        },
    )?;
    if let Some(p) = &cfg.encoder_weights {
        model.load_encoder_weights(p)?;
    }
    Ok(model)
}

/// Trains a segmentation model on the train split, validating on the valid
/// split. With a run directory, logs every step and epoch and keeps the best
/// (by validation mAP) and the last checkpoint.
pub fn train_segmentation(cfg: &ExperimentConfig, splits: &Splits, run: Option<&RunDir>) -> Result<SegOutcome> {
    cfg.validate()?;
    let train = splits.require(Split::Train)?;
    let model = build_model(cfg, false)?;
    let mut opt = Optimizer::new(&cfg.optimizer, model.store(), |_| true)?;

    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = cfg.max_steps.unwrap_or(cfg.epochs * per_epoch);
    let epochs = total.div_ceil(per_epoch);
    let ckpt_dir = run.map(|r| r.checkpoint_dir(cfg));

    let mut step = 0;
    let mut history = Vec::new();
    let mut losses = Vec::new();
    let mut batch_hashes = Vec::new();
    let mut best: Option<BestMetric> = None;
    let mut best_checkpoint = None;
    let mut lr = cfg.optimizer.lr_at(0, total);

    for epoch in 0..epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        for idx in order.chunks(cfg.batch_size) {
            if step >= total {
                break;
            }
            let (samples, hash) = load_batch(train, idx, cfg, epoch)?;
            let refs: Vec<&FundusSample> = samples.iter().collect();
            let x = stack_images(&refs, model.device())?;
            let y = stack_masks(&refs, model.device())?;
            let out = model.forward(&x, true)?;
            let loss = seg_loss_raw(&out, &y, &cfg.seg_loss)?;
            let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { value, epoch, step });
            }
            lr = cfg.optimizer.lr_at(step, total);
            opt.step(&loss.backward()?, lr)?;
            log_opt(
                run,
                &StepRecord {
                    event: "step".into(),
                    epoch,
                    step,
                    loss: value,
                    lr,
                    batch: hash.clone(),
                },
            )?;
            losses.push(value);
            batch_hashes.push(hash);
            epoch_loss += value;
            epoch_steps += 1;
            step += 1;
        }

        let last = epoch + 1 == epochs;
        let mut record = SegEpochRecord {
            event: "epoch".into(),
            epoch,
            step,
            mean_loss: epoch_loss / epoch_steps.max(1) as f64,
            lr,
            val_dice: None,
            val_map: None,
        };
        if !splits.valid.is_empty() && ((epoch + 1) % cfg.eval_every == 0 || last) {
            let e = evaluate(&model, &splits.valid, &cfg.eval, cfg.batch_size, None)?;
            let dice = Lesion::ALL.map(|l| e.report.per_lesion.get(&l).map_or(0.0, |m| m.dice));
            record.val_dice = Some(dice);
            record.val_map = Some(e.report.map_score);
            if best.as_ref().is_none_or(|b| e.report.map_score > b.value) {
                best = Some(BestMetric {
                    name: "val_map".into(),
                    value: e.report.map_score,
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
            "epoch {epoch}: loss {:.4}, val mAP {}",
            record.mean_loss,
            record.val_map.map_or("-".into(), |m| format!("{m:.4}"))
        );
        log_opt(run, &record)?;
        history.push(record);
    }

    let last_checkpoint = match &ckpt_dir {
        Some(d) => {
            let p = d.join(LAST_CHECKPOINT);
            Checkpoint::from_model(&model, &cfg.preprocess, epochs.saturating_sub(1), step, best.clone(), Some(&opt))?
                .save(&p)?;
            Some(p)
        }
        None => None,
    };
    Ok(SegOutcome {
        model,
        history,
        losses,
        batch_hashes,
        best,
        best_checkpoint,
        last_checkpoint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    /// `(step, training loss, Dice)` at each check, Dice measured in inference mode.
    pub history: Vec<(usize, f64, f64)>,
    /// Steps taken when the target was first reached, if it was.
    pub reached_at: Option<usize>,
    pub final_dice: f64,
}

/// Fits one fixed batch without augmentation, checking the Dice of `lesion` on
/// that same batch every `check_every` steps. Stops once `target` is reached.
pub fn overfit(
    cfg: &ExperimentConfig,
    samples: &[FundusSample],
    lesion: Lesion,
    target: f64,
    max_steps: usize,
    check_every: usize,
) -> Result<OverfitReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::NoEntries {
            dataset: "overfit".into(),
            split: "train".into(),
        });
    }
    let model = build_model(cfg, false)?;
    let mut opt = Optimizer::new(&cfg.optimizer, model.store(), |_| true)?;
    let refs: Vec<&FundusSample> = samples.iter().collect();
    let x = stack_images(&refs, model.device())?;
    let y = stack_masks(&refs, model.device())?;
    let mut history = Vec::new();
    let mut final_dice = 0.0;
    for step in 0..max_steps {
        let loss = seg_loss_raw(&model.forward(&x, true)?, &y, &cfg.seg_loss)?;
        let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { value, epoch: 0, step });
        }
        opt.step(&loss.backward()?, cfg.optimizer.lr_at(step, max_steps))?;
        let done = step + 1;
        if done % check_every.max(1) == 0 || done == max_steps {
            let set = SampleSet::memory(samples.to_vec());
            let e = evaluate(&model, &set, &cfg.eval, samples.len(), None)?;
            final_dice = e.report.per_lesion.get(&lesion).map_or(0.0, |m| m.dice);
            history.push((done, value, final_dice));
            log::info!("overfit step {done}: loss {value:.4}, {} Dice {final_dice:.4}", lesion.code());
            if final_dice >= target {
                return Ok(OverfitReport {
                    history,
                    reached_at: Some(done),
                    final_dice,
                });
            }
        }
    }
    Ok(OverfitReport {
        history,
        reached_at: None,
        final_dice,
    })
}

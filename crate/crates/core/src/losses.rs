//! Positive-weighted binary cross-entropy for lesion maps, its deep-supervision
//! aggregate over decoder stages, and label-smoothed cross-entropy for screening.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LesionOutput, DECODER_DEPTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegLossConfig {
    /// Weight of positive (lesion) pixels.
    pub alpha: f64,
    /// Predictions are clamped to `[clamp_eps, 1 - clamp_eps]` before the logs.
    pub clamp_eps: f64,
    /// Weight of each decoder stage's head, shallowest (stride 32) first.
    pub per_layer_weights: [f64; DECODER_DEPTH],
}

impl Default for SegLossConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            clamp_eps: 1e-7,
            per_layer_weights: [1.0; DECODER_DEPTH],
        }
    }
}

impl SegLossConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= 1e-3) {
            return Err(Error::Config(format!("clamp_eps must be in (0, 1e-3], got {}", self.clamp_eps)));
        }
        if self.per_layer_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("per-layer weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig {
    pub epsilon: f64,
    pub num_classes: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            num_classes: 2,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must be in [0, 1), got {}", self.epsilon)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }
}

fn check_binary(gt: &Tensor) -> Result<()> {
    let v: Vec<f64> = gt.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    if let Some(bad) = v.iter().find(|&&x| x != 0.0 && x != 1.0) {
        return Err(Error::InvalidValue(format!("ground truth value {bad} is not 0 or 1")));
    }
    Ok(())
}

/// Mean over all elements of `-[α g log x + (1 - g) log(1 - x)]`, without input checks.
pub(crate) fn weighted_bce_raw(pred: &Tensor, gt: &Tensor, cfg: &SegLossConfig) -> Result<Tensor> {
    let x = pred.clamp(cfg.clamp_eps, 1.0 - cfg.clamp_eps)?;
    let gt = gt.to_dtype(x.dtype())?;
    let pos = (gt.mul(&x.log()?)? * cfg.alpha)?;
    let neg = gt.affine(-1.0, 1.0)?.mul(&x.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.neg()?)
}

/// Positive-weighted binary cross-entropy between a probability map and a binary
/// map of the same shape, averaged over pixels (and over any leading axes).
pub fn weighted_bce(pred: &Tensor, gt: &Tensor, cfg: &SegLossConfig) -> Result<Tensor> {
    cfg.validate()?;
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims())));
    }
    check_binary(gt)?;
    weighted_bce_raw(pred, gt, cfg)
}

/// Max-pool downsampling of a binary (N, C, S, S) mask to side `size`: a cell is
/// positive when any pixel inside it is.
pub fn downsample_mask(gt: &Tensor, size: usize) -> Result<Tensor> {
    let (_, _, h, w) = gt.dims4()?;
    if h == size && w == size {
        return Ok(gt.clone());
    }
    if h % size != 0 || w % size != 0 || h / size != w / size {
        return Err(Error::Shape(format!("cannot pool {h}x{w} down to {size}x{size}")));
    }
    Ok(gt.max_pool2d(h / size)?)
}

/// Deep-supervision loss: for each stage, the ground truth is max-pooled to the
/// head resolution and the weighted BCE (mean over lesion channels and batch) is
/// scaled by that stage's weight.
pub fn seg_loss(output: &LesionOutput, gt_mask: &Tensor, cfg: &SegLossConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_binary(gt_mask)?;
    seg_loss_raw(output, gt_mask, cfg)
}

pub(crate) fn seg_loss_raw(output: &LesionOutput, gt_mask: &Tensor, cfg: &SegLossConfig) -> Result<Tensor> {
    if output.per_stage.len() != cfg.per_layer_weights.len() {
        return Err(Error::Shape(format!(
            "{} stage outputs but {} stage weights",
            output.per_stage.len(),
            cfg.per_layer_weights.len()
        )));
    }
    let gt_mask = gt_mask.to_dtype(output.final_map.dtype())?;
    let mut total: Option<Tensor> = None;
    for (pred, &w) in output.per_stage.iter().zip(cfg.per_layer_weights.iter()) {
        let (_, c, h, _) = pred.dims4()?;
        if c != gt_mask.dim(1)? {
            return Err(Error::Shape(format!("{c} predicted channels, {} ground-truth channels", gt_mask.dim(1)?)));
        }
        let gt = downsample_mask(&gt_mask, h)?;
        let term = (weighted_bce_raw(pred, &gt, cfg)? * w)?;
        total = Some(match total {
            None => term,
            Some(t) => (t + term)?,
        });
    }
    total.ok_or_else(|| Error::Shape("no stage outputs".into()))
}

/// Label-smoothed target: `1 - ε + ε/C` for the true class, `ε/C` elsewhere.
pub fn smooth_labels(hard_label: usize, cfg: &SmoothingConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let c = cfg.num_classes;
    if hard_label >= c {
        return Err(Error::InvalidValue(format!("class index {hard_label} out of range for {c} classes")));
    }
    let off = cfg.epsilon / c as f64;
    let on = 1.0 - (c - 1) as f64 * off;
    let mut v = vec![off; c];
    v[hard_label] = on;
    Ok(v)
}

/// Smoothed targets for a batch of labels as an (N, C) tensor.
pub fn smooth_label_batch(labels: &[usize], cfg: &SmoothingConfig, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(labels.len() * cfg.num_classes);
    for &l in labels {
        data.extend(smooth_labels(l, cfg)?);
    }
    Ok(Tensor::from_vec(data, (labels.len(), cfg.num_classes), device)?.to_dtype(dtype)?)
}

/// Cross-entropy `-Σ_i ŷ_i log softmax(y)_i` per sample, averaged over the batch.
/// `logits` and `targets` are (N, C) or (C,).
pub fn screening_ce(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let (logits, targets) = if logits.rank() == 1 {
        (logits.unsqueeze(0)?, targets.unsqueeze(0)?)
    } else {
        (logits.clone(), targets.clone())
    };
    if logits.dims() != targets.dims() {
        return Err(Error::Shape(format!("logits {:?} vs targets {:?}", logits.dims(), targets.dims())));
    }
    let vals: Vec<f64> = logits.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite logits".into()));
    }
    let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
    let targets = targets.to_dtype(logp.dtype())?;
    Ok(targets.mul(&logp)?.sum(D::Minus1)?.mean_all()?.neg()?)
}

//! Inference passes: lesion probability maps, evaluation reports, overlays.

use std::path::Path;

use candle_core::{DType, Tensor, D};
use ndarray::{Array3, Array4};
use sha2::{Digest, Sha256};

use crate::data::io::save_rgb;
use crate::data::{stack_images, FundusSample};
use crate::error::{Error, Result};
use crate::lesion::Lesion;
use crate::metrics::{screening_metrics_at, MetricsReport, SegEvaluator};
use crate::model::Lanet;
use crate::training::config::EvalConfig;
use crate::training::dataset::SampleSet;

/// Final lesion maps (N, 4, S, S) for a batch, in inference mode.
pub fn predict_maps(model: &Lanet, samples: &[&FundusSample]) -> Result<Array4<f32>> {
    Ok(predict(model, samples)?.0)
}

/// Final lesion maps plus, for screening models, the NPDR probability per sample.
pub fn predict(model: &Lanet, samples: &[&FundusSample]) -> Result<(Array4<f32>, Option<Vec<f64>>)> {
    let x = stack_images(samples, model.device())?;
    if model.variant().screening_head {
        let (out, logits) = model.forward_screening(&x, false)?;
        let p = candle_nn::ops::softmax(&logits.to_dtype(DType::F64)?, D::Minus1)?;
        let npdr = p.narrow(1, 1, 1)?.flatten_all()?.to_vec1()?;
        Ok((tensor_to_array4(&out.final_map.to_dtype(DType::F32)?)?, Some(npdr)))
    } else {
        let y = model.forward(&x, false)?.final_map.to_dtype(DType::F32)?;
        Ok((tensor_to_array4(&y)?, None))
    }
}

fn tensor_to_array4(t: &Tensor) -> Result<Array4<f32>> {
    let (n, c, h, w) = t.dims4()?;
    let v: Vec<f32> = t.flatten_all()?.to_vec1()?;
    Array4::from_shape_vec((n, c, h, w), v).map_err(|e| Error::Shape(e.to_string()))
}

/// The image with every lesion pixel (probability ≥ `threshold`) tinted in its
/// lesion colour. Later lesions in EX, HE, MA, SE order paint over earlier ones.
pub fn overlay(image: &Array3<f32>, probs: &Array3<f32>, threshold: f32) -> Array3<f32> {
    let mut out = image.clone();
    let (_, h, w) = image.dim();
    for l in Lesion::ALL {
        let c = l.color();
        for y in 0..h {
            for x in 0..w {
                if probs[[l.channel(), y, x]] >= threshold {
                    for k in 0..3 {
                        out[[k, y, x]] = 0.4 * image[[k, y, x]] + 0.6 * c[k] as f32 / 255.0;
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// SHA-256 over the ids and image bytes fed to the model, in order.
    pub stream_hash: String,
    /// Fraction of correctly classified images, for screening models.
    pub accuracy: Option<f64>,
}

/// Deterministic pass over `set`. Segmentation metrics use the samples' masks;
/// screening metrics are added when the model has a screening head and the
/// samples carry labels. Overlays go to `overlay_dir` when given.
pub fn evaluate(
    model: &Lanet,
    set: &SampleSet,
    cfg: &EvalConfig,
    batch_size: usize,
    overlay_dir: Option<&Path>,
) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::MetricUndefined("nothing to evaluate".into()));
    }
    if let Some(d) = overlay_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut ev = SegEvaluator::new(cfg.threshold, cfg.ap_mode);
    let mut hasher = Sha256::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let samples = set.get_many(chunk)?;
        let refs: Vec<&FundusSample> = samples.iter().collect();
        for s in &refs {
            hasher.update(s.id.as_bytes());
            for v in s.image.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        let (maps, npdr) = predict(model, &refs)?;
        for (i, s) in refs.iter().enumerate() {
            let probs = maps.index_axis(ndarray::Axis(0), i).to_owned();
            if let Some(m) = &s.mask {
                ev.add(&probs, m)?;
            }
            if let Some(d) = overlay_dir {
                save_rgb(&d.join(format!("{}.png", s.id)), &overlay(&s.image, &probs, cfg.threshold))?;
            }
        }
        if let (Some(p), true) = (npdr, refs.iter().all(|s| s.screen_label.is_some())) {
            scores.extend(p);
            labels.extend(refs.iter().map(|s| s.screen_label.expect("checked").index() as u8));
        }
    }
    let mut report = if ev.num_images() > 0 {
        ev.finish()?
    } else {
        MetricsReport::empty(cfg.threshold, cfg.ap_mode)
    };
    let mut accuracy = None;
    if !scores.is_empty() {
        let correct = scores
            .iter()
            .zip(&labels)
            .filter(|(s, l)| ((**s >= 0.5) as u8) == **l)
            .count();
        accuracy = Some(correct as f64 / scores.len() as f64);
        report.screening = screening_metrics_at(&scores, &labels, 0.5).ok();
        report.num_images = scores.len();
    }
    Ok(Evaluation {
        report,
        stream_hash: hex(&hasher.finalize()),
        accuracy,
    })
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

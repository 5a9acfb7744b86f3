//! Segmentation metrics (MAE, Dice, AP, mAP) and screening metrics
//! (precision, sensitivity, F1, AUC), plus the report they are collected into.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lesion::{Lesion, NUM_LESIONS};

/// Mean absolute per-pixel error between a probability map and a binary map.
pub fn mae(pred: &[f32], gt: &[u8]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::MetricUndefined("MAE of an empty map".into()));
    }
    let s: f64 = pred.iter().zip(gt).map(|(&p, &g)| (p as f64 - g as f64).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// `2|y ∩ ŷ| / (|y| + |ŷ|)` for one image; 1 when both maps are empty.
pub fn dice_single(pred: &[u8], gt: &[u8]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
    }
    let (mut inter, mut np, mut ng) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p > 0, g > 0);
        np += p as u64;
        ng += g as u64;
        inter += (p && g) as u64;
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// Mean per-image Dice over aligned lists of binary maps.
pub fn dice<P: AsRef<[u8]>, G: AsRef<[u8]>>(preds: &[P], gts: &[G]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::MetricUndefined("Dice of an empty list".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions, {} ground truths", preds.len(), gts.len())));
    }
    let mut s = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        s += dice_single(p.as_ref(), g.as_ref())?;
    }
    Ok(s / preds.len() as f64)
}

/// `Σ_m (R^m − R^{m−1}) P^m`, with one threshold at each distinct score taken in
/// descending order.
pub fn average_precision(scores: &[f32], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidValue("NaN score".into()));
    }
    let npos = labels.iter().filter(|&&l| l > 0).count();
    if npos == 0 {
        return Err(Error::ApUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] > 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / npos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapScore {
    pub value: f64,
    /// Lesions whose AP was undefined and left out of the mean.
    pub skipped: Vec<Lesion>,
}

/// Arithmetic mean over the defined per-lesion APs.
pub fn map_score(aps: &[Option<f64>; NUM_LESIONS]) -> Result<MapScore> {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut skipped = Vec::new();
    for (l, ap) in Lesion::ALL.iter().zip(aps) {
        match ap {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => skipped.push(*l),
        }
    }
    if n == 0 {
        return Err(Error::MetricUndefined("mAP: no lesion has a defined AP".into()));
    }
    Ok(MapScore {
        value: sum / n as f64,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub auc: f64,
}

/// Area under the ROC curve as the normalized Mann-Whitney statistic; ties count half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let npos = labels.iter().filter(|&&l| l > 0).count();
    let nneg = labels.len() - npos;
    if npos == 0 || nneg == 0 {
        return Err(Error::MetricUndefined("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidValue("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks (1-based) over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum_pos += avg * order[i..j].iter().filter(|&&k| labels[k] > 0).count() as f64;
        i = j;
    }
    let u = rank_sum_pos - (npos * (npos + 1)) as f64 / 2.0;
    Ok(u / (npos as f64 * nneg as f64))
}

/// Precision, sensitivity and F1 at `threshold` (score ≥ threshold is positive), plus AUC.
pub fn screening_metrics_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ScreeningMetrics> {
    let auc = auc(scores, labels)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l > 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let sensitivity = ratio(tp, tp + fneg);
    let f1 = if precision + sensitivity > 0.0 {
        2.0 * precision * sensitivity / (precision + sensitivity)
    } else {
        0.0
    };
    Ok(ScreeningMetrics {
        precision,
        sensitivity,
        f1,
        auc,
    })
}

pub fn screening_metrics(scores: &[f64], labels: &[u8]) -> Result<ScreeningMetrics> {
    screening_metrics_at(scores, labels, 0.5)
}

/// How pixel scores are turned into one AP per lesion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Pool every pixel of the evaluated set before ranking.
    #[default]
    Pooled,
    /// AP per image, averaged over images that contain the lesion.
    PerImage,
}

impl ApMode {
    pub fn name(self) -> &'static str {
        match self {
            ApMode::Pooled => "pooled",
            ApMode::PerImage => "per-image",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionMetrics {
    pub mae: f64,
    pub dice: f64,
    /// `None` when the evaluated set has no positive pixel for this lesion.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_lesion: BTreeMap<Lesion, LesionMetrics>,
    pub map_score: f64,
    pub map_skipped: Vec<Lesion>,
    pub ap_mode: ApMode,
    pub threshold: f64,
    pub num_images: usize,
    /// Images where both prediction and ground truth were empty, counted as Dice 1, per lesion.
    pub dice_empty_images: BTreeMap<Lesion, usize>,
    pub screening: Option<ScreeningMetrics>,
}

impl MetricsReport {
    /// A report with no segmentation content (every lesion undefined).
    pub fn empty(threshold: f32, ap_mode: ApMode) -> Self {
        Self {
            per_lesion: BTreeMap::new(),
            map_score: 0.0,
            map_skipped: Lesion::ALL.to_vec(),
            ap_mode,
            threshold: threshold as f64,
            num_images: 0,
            dice_empty_images: BTreeMap::new(),
            screening: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidValue(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidValue(e.to_string()))
    }

    /// Plain-text table: one row per lesion with MAE, Dice and AP, then mAP, then
    /// the screening row when present.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:>10}{:>10}{:>10}", "Lesion", "MAE", "Dice", "AP");
        for (l, m) in &self.per_lesion {
            let ap = m.ap.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(s, "{:<8}{:>10.4}{:>10.4}{:>10}", l.code(), m.mae, m.dice, ap);
        }
        let _ = writeln!(s, "{:<8}{:>30.4}", "mAP", self.map_score);
        if !self.map_skipped.is_empty() {
            let names: Vec<_> = self.map_skipped.iter().map(|l| l.code()).collect();
            let _ = writeln!(s, "mAP excludes lesions without positives: {}", names.join(", "));
        }
        let _ = writeln!(
            s,
            "AP pooling: {}; threshold: {}; images: {}; empty-vs-empty Dice counted as 1",
            self.ap_mode.name(),
            self.threshold,
            self.num_images
        );
        if let Some(m) = &self.screening {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:>10}{:>10}{:>10}{:>10}", "Pr", "Se", "F1", "AUC");
            let _ = writeln!(s, "{:>10.4}{:>10.4}{:>10.4}{:>10.4}", m.precision, m.sensitivity, m.f1, m.auc);
        }
        s
    }
}

/// Accumulates per-image predictions and produces a [`MetricsReport`].
#[derive(Debug, Clone)]
pub struct SegEvaluator {
    threshold: f32,
    mode: ApMode,
    num_images: usize,
    mae_sum: [f64; NUM_LESIONS],
    dice_sum: [f64; NUM_LESIONS],
    dice_empty: [usize; NUM_LESIONS],
    pooled: [(Vec<f32>, Vec<u8>); NUM_LESIONS],
    per_image_ap: [Vec<f64>; NUM_LESIONS],
}

impl SegEvaluator {
    pub fn new(threshold: f32, mode: ApMode) -> Self {
        Self {
            threshold,
            mode,
            num_images: 0,
            mae_sum: [0.0; NUM_LESIONS],
            dice_sum: [0.0; NUM_LESIONS],
            dice_empty: [0; NUM_LESIONS],
            pooled: Default::default(),
            per_image_ap: Default::default(),
        }
    }

    /// `prob` is (4, H, W) in [0, 1], `gt` is (4, H, W) binary.
    pub fn add(&mut self, prob: &Array3<f32>, gt: &Array3<u8>) -> Result<()> {
        if prob.dim() != gt.dim() || prob.dim().0 != NUM_LESIONS {
            return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", prob.dim(), gt.dim())));
        }
        for k in 0..NUM_LESIONS {
            let p: Vec<f32> = prob.index_axis(Axis(0), k).iter().copied().collect();
            let g: Vec<u8> = gt.index_axis(Axis(0), k).iter().map(|&v| (v > 0) as u8).collect();
            self.mae_sum[k] += mae(&p, &g)?;
            let bin: Vec<u8> = p.iter().map(|&v| (v >= self.threshold) as u8).collect();
            if bin.iter().all(|&v| v == 0) && g.iter().all(|&v| v == 0) {
                self.dice_empty[k] += 1;
            }
            self.dice_sum[k] += dice_single(&bin, &g)?;
            match self.mode {
                ApMode::Pooled => {
                    self.pooled[k].0.extend_from_slice(&p);
                    self.pooled[k].1.extend_from_slice(&g);
                }
                ApMode::PerImage => match average_precision(&p, &g) {
                    Ok(ap) => self.per_image_ap[k].push(ap),
                    Err(Error::ApUndefined) => {}
                    Err(e) => return Err(e),
                },
            }
        }
        self.num_images += 1;
        Ok(())
    }

    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.num_images == 0 {
            return Err(Error::MetricUndefined("no images evaluated".into()));
        }
        let n = self.num_images as f64;
        let mut aps = [None; NUM_LESIONS];
        let mut per_lesion = BTreeMap::new();
        let mut dice_empty_images = BTreeMap::new();
        for l in Lesion::ALL {
            let k = l.channel();
            aps[k] = match self.mode {
                ApMode::Pooled => match average_precision(&self.pooled[k].0, &self.pooled[k].1) {
                    Ok(v) => Some(v),
                    Err(Error::ApUndefined) => None,
                    Err(e) => return Err(e),
                },
                ApMode::PerImage => {
                    let v = &self.per_image_ap[k];
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                }
            };
            per_lesion.insert(
                l,
                LesionMetrics {
                    mae: self.mae_sum[k] / n,
                    dice: self.dice_sum[k] / n,
                    ap: aps[k],
                },
            );
            dice_empty_images.insert(l, self.dice_empty[k]);
        }
        let (map_value, map_skipped) = match map_score(&aps) {
            Ok(m) => (m.value, m.skipped),
            Err(_) => (0.0, Lesion::ALL.to_vec()),
        };
        Ok(MetricsReport {
            per_lesion,
            map_score: map_value,
            map_skipped,
            ap_mode: self.mode,
            threshold: self.threshold as f64,
            num_images: self.num_images,
            dice_empty_images,
            screening: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Precision/recall recomputed from full confusion counts at every distinct threshold.
    fn ap_oracle(scores: &[f32], labels: &[u8]) -> f64 {
        let mut th: Vec<f32> = scores.to_vec();
        th.sort_by(|a, b| b.total_cmp(a));
        th.dedup();
        let npos = labels.iter().filter(|&&l| l > 0).count();
        let mut prev = 0.0;
        let mut ap = 0.0;
        for t in th {
            let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l > 0).count();
            let pp = scores.iter().filter(|&&s| s >= t).count();
            let r = tp as f64 / npos as f64;
            ap += (r - prev) * (tp as f64 / pp as f64);
            prev = r;
        }
        ap
    }

    fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut good, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] > 0 && labels[j] == 0 {
                    pairs += 1.0;
                    good += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        good / pairs
    }

    #[test]
    fn mae_values() {
        assert_eq!(mae(&[0.0, 1.0, 1.0], &[0, 1, 1]).unwrap(), 0.0);
        assert!((mae(&[0.25; 16], &[0; 16]).unwrap() - 0.25).abs() < 1e-12);
        let p = [0.1f32, 0.9, 0.4, 0.6, 0.0, 1.0, 0.3, 0.7, 0.2, 0.8, 0.5, 0.5, 0.05, 0.95, 0.45, 0.55];
        let g = [0u8, 1, 1, 0, 0, 1, 0, 0, 1, 1, 0, 1, 0, 0, 1, 1];
        let mut oracle = 0.0;
        for i in 0..16 {
            oracle += (p[i] as f64 - g[i] as f64).abs();
        }
        assert_eq!(mae(&p, &g).unwrap(), oracle / 16.0);
        assert!(mae(&p, &g[..4]).is_err());
    }

    #[test]
    fn dice_values() {
        let g = vec![1u8, 1, 1, 1, 0, 0];
        assert_eq!(dice(&[g.clone()], &[g.clone()]).unwrap(), 1.0);
        let p = vec![1u8, 1, 0, 0, 0, 0];
        assert!((dice(&[p], &[g]).unwrap() - 0.6667).abs() < 1e-4);
        assert_eq!(dice(&[vec![0u8; 4]], &[vec![0u8; 4]]).unwrap(), 1.0);
        assert!(dice::<Vec<u8>, Vec<u8>>(&[], &[]).is_err());
    }

    #[test]
    fn ap_values() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let ap = average_precision(&[0.9, 0.8, 0.3], &[1, 0, 1]).unwrap();
        assert!((ap - 0.8333).abs() < 1e-4);
        assert_eq!(ap, ap_oracle(&[0.9, 0.8, 0.3], &[1, 0, 1]));
        assert_eq!(average_precision(&[0.1, 0.7, 0.3], &[1, 1, 1]).unwrap(), 1.0);
        assert!(matches!(average_precision(&[0.5, 0.2], &[0, 0]), Err(Error::ApUndefined)));
    }

    #[test]
    fn map_values() {
        let m = map_score(&[Some(0.641), Some(0.476), Some(0.167), Some(0.713)]).unwrap();
        assert!((m.value - 0.499).abs() <= 1e-3);
        assert!(m.skipped.is_empty());
        assert_eq!(map_score(&[Some(0.3); 4]).unwrap().value, 0.3);
        assert_eq!(map_score(&[Some(0.0), Some(0.0), Some(0.0), Some(1.0)]).unwrap().value, 0.25);
        let partial = map_score(&[Some(0.5), None, Some(1.0), None]).unwrap();
        assert_eq!(partial.value, 0.75);
        assert_eq!(partial.skipped, vec![Lesion::HE, Lesion::SE]);
        assert!(map_score(&[None; 4]).is_err());
    }

    #[test]
    fn screening_values() {
        let m = screening_metrics(&[1.0, 1.0, 0.0, 0.0], &[1, 0, 0, 0]).unwrap();
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.sensitivity, 1.0);
        assert!((m.f1 - 0.6667).abs() < 1e-4);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert!(auc(&[0.2, 0.3], &[1, 1]).is_err());
    }

    #[test]
    fn evaluator_report() {
        let mut ev = SegEvaluator::new(0.5, ApMode::Pooled);
        let gt = Array3::from_shape_fn((4, 4, 4), |(k, y, x)| (k < 3 && y == x) as u8);
        let prob = gt.mapv(|v| if v > 0 { 0.9f32 } else { 0.1 });
        ev.add(&prob, &gt).unwrap();
        let r = ev.finish().unwrap();
        assert_eq!(r.per_lesion[&Lesion::EX].ap, Some(1.0));
        assert_eq!(r.per_lesion[&Lesion::EX].dice, 1.0);
        assert!((r.per_lesion[&Lesion::EX].mae - 0.1).abs() < 1e-6);
        assert_eq!(r.per_lesion[&Lesion::SE].ap, None);
        assert_eq!(r.map_skipped, vec![Lesion::SE]);
        assert_eq!(r.dice_empty_images[&Lesion::SE], 1);
        assert_eq!(r.map_score, 1.0);
        let back = MetricsReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let table = r.to_table();
        assert!(table.contains("mAP") && table.contains("SE") && table.contains("n/a"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ap_matches_oracle(v in prop::collection::vec((0u8..20, any::<bool>()), 1..400)) {
            let scores: Vec<f32> = v.iter().map(|(s, _)| *s as f32 / 19.0).collect();
            let mut labels: Vec<u8> = v.iter().map(|(_, l)| *l as u8).collect();
            labels[0] = 1;
            prop_assert_eq!(average_precision(&scores, &labels).unwrap(), ap_oracle(&scores, &labels));
        }

        #[test]
        fn ap_invariant_under_monotone_transform(v in prop::collection::vec((0u16..1000, any::<bool>()), 1..200)) {
            let scores: Vec<f32> = v.iter().map(|(s, _)| *s as f32 / 1000.0).collect();
            let warped: Vec<f32> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            let mut labels: Vec<u8> = v.iter().map(|(_, l)| *l as u8).collect();
            labels[0] = 1;
            prop_assert_eq!(average_precision(&scores, &labels).unwrap(), average_precision(&warped, &labels).unwrap());
        }

        #[test]
        fn dice_symmetric(a in prop::collection::vec(0u8..2, 1..64), seed in any::<u64>()) {
            let b: Vec<u8> = a.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as u8).collect();
            prop_assert_eq!(dice_single(&a, &b).unwrap(), dice_single(&b, &a).unwrap());
        }

        #[test]
        fn map_permutation_invariant(a in prop::array::uniform4(0.0f64..1.0)) {
            let m1 = map_score(&a.map(Some)).unwrap().value;
            let m2 = map_score(&[Some(a[2]), Some(a[0]), Some(a[3]), Some(a[1])]).unwrap().value;
            prop_assert!((m1 - m2).abs() < 1e-15);
        }

        #[test]
        fn auc_matches_pair_count(v in prop::collection::vec((0u8..10, any::<bool>()), 2..120)) {
            let scores: Vec<f64> = v.iter().map(|(s, _)| *s as f64 / 9.0).collect();
            let mut labels: Vec<u8> = v.iter().map(|(_, l)| *l as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let a = auc(&scores, &labels).unwrap();
            prop_assert!((a - auc_oracle(&scores, &labels)).abs() < 1e-12);
        }
    }
}

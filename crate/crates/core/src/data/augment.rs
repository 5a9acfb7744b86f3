//! Seeded geometric augmentation: horizontal flip, rotation about the centre,
//! random crop resized back to the original size. Image and mask receive the
//! same transform; the mask is resampled nearest-neighbour so it stays binary.

use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::preprocess::{resize_bilinear, resize_nearest, CropBox};
use crate::data::FundusSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    /// Side of the random crop as a fraction of the image side, `[lo, hi]`.
    pub crop_scale: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            max_rotation_deg: 30.0,
            crop_scale: (0.8, 1.0),
        }
    }
}

impl AugmentConfig {
    /// No-op configuration.
    pub fn none() -> Self {
        Self {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
            crop_scale: (1.0, 1.0),
        }
    }
}

/// The concrete transform drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub angle_deg: f64,
    pub crop: Option<CropBox>,
}

impl AugmentParams {
    pub fn draw(cfg: &AugmentConfig, seed: u64, h: usize, w: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flip = rng.random::<f64>() < cfg.flip_prob;
        let angle_deg = if cfg.max_rotation_deg > 0.0 {
            rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
        } else {
            0.0
        };
        let (lo, hi) = cfg.crop_scale;
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
        let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
        let crop = if ch == h && cw == w {
            None
        } else {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            Some(CropBox {
                top,
                bottom: top + ch,
                left,
                right: left + cw,
            })
        };
        Self { flip, angle_deg, crop }
    }
}

fn flip_h<T: Clone>(a: &Array3<T>) -> Array3<T> {
    a.slice(s![.., .., ..;-1]).to_owned()
}

/// Rotation about the image centre by inverse mapping; out-of-image samples are zero.
fn rotate<T: Copy + Default>(a: &Array3<T>, angle_deg: f64, sample: impl Fn(&Array3<T>, usize, f64, f64) -> T) -> Array3<T> {
    let (c, h, w) = a.dim();
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut out = Array3::<T>::default((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            // source position (pixel-centre coordinates)
            let sx = cos * dx + sin * dy + cx - 0.5;
            let sy = -sin * dx + cos * dy + cy - 0.5;
            for k in 0..c {
                out[[k, y, x]] = sample(a, k, sy, sx);
            }
        }
    }
    out
}

fn sample_bilinear(a: &Array3<f32>, k: usize, sy: f64, sx: f64) -> f32 {
    let (_, h, w) = a.dim();
    if sy < -0.5 || sx < -0.5 || sy > h as f64 - 0.5 || sx > w as f64 - 0.5 {
        return 0.0;
    }
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
    let top = a[[k, y0, x0]] * (1.0 - fx) + a[[k, y0, x1]] * fx;
    let bot = a[[k, y1, x0]] * (1.0 - fx) + a[[k, y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

fn sample_nearest(a: &Array3<u8>, k: usize, sy: f64, sx: f64) -> u8 {
    let (_, h, w) = a.dim();
    let (y, x) = (sy.round(), sx.round());
    if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
        return 0;
    }
    a[[k, y as usize, x as usize]]
}

pub fn apply_image(img: &Array3<f32>, p: &AugmentParams) -> Array3<f32> {
    let (_, h, w) = img.dim();
    let mut out = if p.flip { flip_h(img) } else { img.clone() };
    if p.angle_deg != 0.0 {
        out = rotate(&out, p.angle_deg, sample_bilinear);
    }
    if let Some(b) = p.crop {
        out = resize_bilinear(&b.apply(&out), h, w);
    }
    out
}

pub fn apply_mask(mask: &Array3<u8>, p: &AugmentParams) -> Array3<u8> {
    let (_, h, w) = mask.dim();
    let mut out = if p.flip { flip_h(mask) } else { mask.clone() };
    if p.angle_deg != 0.0 {
        out = rotate(&out, p.angle_deg, sample_nearest);
    }
    if let Some(b) = p.crop {
        out = resize_nearest(&b.apply(&out), h, w);
    }
    out
}

/// Applies one seeded random transform to image and mask.
pub fn augment(sample: &FundusSample, seed: u64, cfg: &AugmentConfig) -> FundusSample {
    let (h, w) = sample.size();
    let p = AugmentParams::draw(cfg, seed, h, w);
    FundusSample {
        id: sample.id.clone(),
        image: apply_image(&sample.image, &p),
        mask: sample.mask.as_ref().map(|m| apply_mask(m, &p)),
        screen_label: sample.screen_label,
        split: sample.split,
    }
}

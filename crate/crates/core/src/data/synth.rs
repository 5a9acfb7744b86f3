//! Synthetic fundus-like images with known lesion masks, and writers that lay
//! them out on disk like the public datasets. Used for desk-scale runs,
//! examples and tests.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::io::{save_binary, save_rgb};
use crate::data::{FundusSample, ScreenLabel, Split};
use crate::error::{Error, Result};
use crate::lesion::Lesion;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    /// Blob counts `(min, max)` per lesion, order EX, HE, MA, SE.
    pub counts: [(usize, usize); 4],
    /// Blob radius range as a fraction of the image side, per lesion.
    pub radius: [(f64, f64); 4],
    pub noise: f32,
}

impl SynthConfig {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            counts: [(1, 3), (1, 3), (2, 5), (0, 2)],
            radius: [(0.08, 0.16), (0.04, 0.08), (0.012, 0.025), (0.05, 0.09)],
            noise: 0.02,
        }
    }

    /// No lesions at all.
    pub fn healthy(size: usize) -> Self {
        Self {
            counts: [(0, 0); 4],
            ..Self::new(size)
        }
    }
}

fn lesion_color(l: Lesion) -> [f32; 3] {
    match l {
        Lesion::EX => [0.95, 0.9, 0.35],
        Lesion::HE => [0.3, 0.04, 0.04],
        Lesion::MA => [0.35, 0.05, 0.05],
        Lesion::SE => [0.85, 0.82, 0.72],
    }
}

/// One synthetic image (3, S, S) and its mask (4, S, S).
pub fn synth_fundus(cfg: &SynthConfig, seed: u64) -> (Array3<f32>, Array3<u8>) {
    let s = cfg.size;
    let sf = s as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cy, cx, r) = (sf / 2.0, sf / 2.0, 0.46 * sf);
    let inside = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        dy * dy + dx * dx <= r * r
    };
    let od = (cy + rng.random_range(-0.1..0.1) * sf, cx + rng.random_range(0.15..0.25) * sf);
    let mut image = Array3::<f32>::zeros((3, s, s));
    for y in 0..s {
        for x in 0..s {
            if !inside(y, x) {
                continue;
            }
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let fall = 1.0 - 0.35 * ((dy * dy + dx * dx).sqrt() / r) as f32;
            let (oy, ox) = (y as f64 - od.0, x as f64 - od.1);
            let glow = (-(oy * oy + ox * ox) / (2.0 * (0.05 * sf).powi(2))).exp() as f32;
            let base = [0.78 * fall, 0.36 * fall, 0.14 * fall];
            for k in 0..3 {
                let n = rng.random_range(-cfg.noise..=cfg.noise);
                image[[k, y, x]] = (base[k] + 0.5 * glow + n).clamp(0.0, 1.0);
            }
        }
    }
    let mut mask = Array3::<u8>::zeros((4, s, s));
    for l in Lesion::ALL {
        let k = l.channel();
        let (lo, hi) = cfg.counts[k];
        let n = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        for _ in 0..n {
            let rad = rng.random_range(cfg.radius[k].0..=cfg.radius[k].1) * sf;
            let rad = rad.max(0.75);
            // centre well inside the retina
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = rng.random_range(0.0..(r - rad - 1.0).max(0.0));
            let (by, bx) = (cy + dist * ang.sin(), cx + dist * ang.cos());
            let color = lesion_color(l);
            for y in 0..s {
                for x in 0..s {
                    let (dy, dx) = (y as f64 + 0.5 - by, x as f64 + 0.5 - bx);
                    if dy * dy + dx * dx <= rad * rad && inside(y, x) {
                        mask[[k, y, x]] = 1;
                        for c in 0..3 {
                            image[[c, y, x]] = color[c];
                        }
                    }
                }
            }
        }
    }
    (image, mask)
}

/// In-memory synthetic segmentation samples.
pub fn synth_samples(cfg: &SynthConfig, n: usize, split: Split, seed: u64) -> Vec<FundusSample> {
    (0..n)
        .map(|i| {
            let (image, mask) = synth_fundus(cfg, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            FundusSample {
                id: format!("synth_{}_{i:04}", split.name()),
                image,
                mask: Some(mask),
                screen_label: None,
                split,
            }
        })
        .collect()
}

/// In-memory synthetic screening samples: NPDR images carry lesions, NoDR images none.
pub fn synth_screening_samples(size: usize, n: usize, split: Split, seed: u64) -> Vec<FundusSample> {
    let sick = SynthConfig::new(size);
    let healthy = SynthConfig::healthy(size);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { ScreenLabel::NoDR } else { ScreenLabel::NPDR };
            let cfg = if label == ScreenLabel::NPDR { &sick } else { &healthy };
            let (image, mask) = synth_fundus(cfg, seed.wrapping_mul(7_919).wrapping_add(i as u64));
            FundusSample {
                id: format!("scr_{}_{i:04}", split.name()),
                image,
                mask: Some(mask),
                screen_label: Some(label),
                split,
            }
        })
        .collect()
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes a DDR-style lesion segmentation tree
/// (`lesion_segmentation/<split>/image/*.png`, `.../label/<LESION>/*.tif`)
/// with a black border around every image.
pub fn write_ddr_seg(root: &Path, counts: [usize; 3], cfg: &SynthConfig, seed: u64) -> Result<()> {
    let base = root.join("lesion_segmentation");
    for (split, &n) in Split::ALL.iter().zip(counts.iter()) {
        let img_dir = base.join(split.name()).join("image");
        mkdir(&img_dir)?;
        for l in Lesion::ALL {
            mkdir(&base.join(split.name()).join("label").join(l.code()))?;
        }
        for i in 0..n {
            let id = format!("{}_{i:04}", split.name());
            let (img, mask) = synth_fundus(cfg, seed.wrapping_add((*split as u64) << 32 | i as u64));
            save_rgb(&img_dir.join(format!("{id}.png")), &add_border(&img, 4))?;
            for l in Lesion::ALL {
                let ch: Array2<u8> = add_border(&mask, 4).index_axis(ndarray::Axis(0), l.channel()).to_owned();
                if ch.iter().any(|&v| v > 0) {
                    save_binary(&base.join(split.name()).join("label").join(l.code()).join(format!("{id}.tif")), &ch)?;
                }
            }
        }
    }
    Ok(())
}

/// Writes a DDR-style grading tree (`DR_grading/<split>/*.png` plus
/// `<split>.txt` with `<file> <grade>` lines). `counts[split] = (nodr, npdr, excluded)`;
/// excluded images get grades 4 or 5.
pub fn write_ddr_scr(root: &Path, counts: [(usize, usize, usize); 3], size: usize, seed: u64) -> Result<()> {
    let base = root.join("DR_grading");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sick = SynthConfig::new(size);
    let healthy = SynthConfig::healthy(size);
    for (split, &(nodr, npdr, excluded)) in Split::ALL.iter().zip(counts.iter()) {
        let dir = base.join(split.name());
        mkdir(&dir)?;
        let mut lines = String::new();
        for i in 0..nodr + npdr + excluded {
            let (grade, cfg) = if i < nodr {
                (0u8, &healthy)
            } else if i < nodr + npdr {
                (rng.random_range(1..=3u8), &sick)
            } else {
                (rng.random_range(4..=5u8), &sick)
            };
            let name = format!("{}_{i:05}.png", split.name());
            let (img, _) = synth_fundus(cfg, rng.random());
            save_rgb(&dir.join(&name), &add_border(&img, 4))?;
            lines.push_str(&format!("{name} {grade}\n"));
        }
        let list = base.join(format!("{}.txt", split.name()));
        fs::write(&list, lines).map_err(|e| Error::io(&list, e))?;
    }
    Ok(())
}

/// Writes an IDRiD-style tree (`A. Segmentation/1. Original Images/<set>/IDRiD_NN.png`
/// and `.../2. All Segmentation Groundtruths/<set>/<n. Lesion>/IDRiD_NN_<CODE>.tif`)
/// with `train` images in the published training set and `test` in the testing set.
pub fn write_idrid_seg(root: &Path, train: usize, test: usize, cfg: &SynthConfig, seed: u64) -> Result<()> {
    let base = root.join("A. Segmentation");
    let lesion_dirs = [
        (Lesion::MA, "1. Microaneurysms"),
        (Lesion::HE, "2. Haemorrhages"),
        (Lesion::EX, "3. Hard Exudates"),
        (Lesion::SE, "4. Soft Exudates"),
    ];
    let mut next = 1;
    for (set, n) in [("a. Training Set", train), ("b. Testing Set", test)] {
        let img_dir = base.join("1. Original Images").join(set);
        let gt_dir = base.join("2. All Segmentation Groundtruths").join(set);
        mkdir(&img_dir)?;
        for (_, d) in lesion_dirs {
            mkdir(&gt_dir.join(d))?;
        }
        for _ in 0..n {
            let id = format!("IDRiD_{next:02}");
            let (img, mask) = synth_fundus(cfg, seed.wrapping_add(next as u64));
            save_rgb(&img_dir.join(format!("{id}.png")), &add_border(&img, 4))?;
            let mask = add_border(&mask, 4);
            for (l, d) in lesion_dirs {
                let ch: Array2<u8> = mask.index_axis(ndarray::Axis(0), l.channel()).to_owned();
                if ch.iter().any(|&v| v > 0) {
                    save_binary(&gt_dir.join(d).join(format!("{id}_{}.tif", l.code())), &ch)?;
                }
            }
            next += 1;
        }
    }
    Ok(())
}

/// Writes an FGADR-style tree (`Seg-set/Original_Images/*.png`, one mask folder
/// per lesion, and `DR_Seg_Grading_Label.csv`). The first `pdr` images get grade 4,
/// the rest grades 0 to 3.
pub fn write_fgadr_seg(root: &Path, n: usize, pdr: usize, cfg: &SynthConfig, seed: u64) -> Result<()> {
    let base = root.join("Seg-set");
    let img_dir = base.join("Original_Images");
    mkdir(&img_dir)?;
    let lesion_dirs = [
        (Lesion::EX, "HardExudate_Masks"),
        (Lesion::HE, "Hemohedge_Masks"),
        (Lesion::MA, "Microaneurysms_Masks"),
        (Lesion::SE, "SoftExudate_Masks"),
    ];
    for (_, d) in lesion_dirs {
        mkdir(&base.join(d))?;
    }
    let mut csv = String::new();
    for i in 0..n {
        let name = format!("{i:04}_1.png");
        let (img, mask) = synth_fundus(cfg, seed.wrapping_add(i as u64));
        save_rgb(&img_dir.join(&name), &img)?;
        for (l, d) in lesion_dirs {
            let ch: Array2<u8> = mask.index_axis(ndarray::Axis(0), l.channel()).to_owned();
            if ch.iter().any(|&v| v > 0) {
                save_binary(&base.join(d).join(&name), &ch)?;
            }
        }
        let grade = if i < pdr { 4 } else { i % 4 };
        csv.push_str(&format!("{name},{grade}\n"));
    }
    let p = base.join("DR_Seg_Grading_Label.csv");
    fs::write(&p, csv).map_err(|e| Error::io(&p, e))
}

fn add_border<T: Copy + Default>(a: &Array3<T>, b: usize) -> Array3<T> {
    let (c, h, w) = a.dim();
    let mut out = Array3::<T>::default((c, h + 2 * b, w + 2 * b));
    out.slice_mut(ndarray::s![.., b..b + h, b..b + w]).assign(a);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_deterministic_and_consistent() {
        let cfg = SynthConfig::new(64);
        let (a, ma) = synth_fundus(&cfg, 5);
        let (b, mb) = synth_fundus(&cfg, 5);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(ma.iter().all(|&v| v <= 1));
        // EX is always present with the default counts
        assert!(ma.index_axis(ndarray::Axis(0), 0).iter().any(|&v| v == 1));
    }

    #[test]
    fn healthy_has_empty_mask() {
        let (_, m) = synth_fundus(&SynthConfig::healthy(32), 1);
        assert!(m.iter().all(|&v| v == 0));
    }
}

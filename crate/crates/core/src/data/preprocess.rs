//! Black-border cropping, contrast-limited adaptive histogram equalization on
//! luminance, square padding and resizing.
//!
//! Pipeline order is crop → pad → enhance → resize.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub input_size: usize,
    /// Channel-mean brightness (fraction of full scale) a pixel must exceed to count as retina.
    pub border_threshold: f32,
    pub enhance: bool,
    pub clahe_clip_limit: f32,
    /// Tiles per side of the equalization grid.
    pub clahe_tiles: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            input_size: 512,
            border_threshold: 0.02,
            enhance: true,
            clahe_clip_limit: 2.0,
            clahe_tiles: 8,
        }
    }
}

/// Half-open crop rectangle `[top, bottom) × [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl CropBox {
    pub fn apply<T: Clone>(&self, a: &Array3<T>) -> Array3<T> {
        a.slice(s![.., self.top..self.bottom, self.left..self.right]).to_owned()
    }
}

/// Bounding box of pixels whose channel-mean brightness exceeds `threshold`.
pub fn retina_box(image: &Array3<f32>, threshold: f32) -> Result<CropBox> {
    let (c, h, w) = image.dim();
    let mut rows = (usize::MAX, 0usize);
    let mut cols = (usize::MAX, 0usize);
    for y in 0..h {
        for x in 0..w {
            let mean = (0..c).map(|k| image[[k, y, x]]).sum::<f32>() / c as f32;
            if mean > threshold {
                rows = (rows.0.min(y), rows.1.max(y + 1));
                cols = (cols.0.min(x), cols.1.max(x + 1));
            }
        }
    }
    if rows.0 == usize::MAX {
        return Err(Error::NoRetinaContent);
    }
    Ok(CropBox {
        top: rows.0,
        bottom: rows.1,
        left: cols.0,
        right: cols.1,
    })
}

/// Crops the image to the tight box around its non-black content.
pub fn crop_black_border(image: &Array3<f32>, threshold: f32) -> Result<(Array3<f32>, CropBox)> {
    let b = retina_box(image, threshold)?;
    Ok((b.apply(image), b))
}

/// Zero-pads to a centred square.
pub fn pad_to_square<T: Clone + Default>(a: &Array3<T>) -> Array3<T> {
    let (c, h, w) = a.dim();
    if h == w {
        return a.clone();
    }
    let side = h.max(w);
    let (oy, ox) = ((side - h) / 2, (side - w) / 2);
    let mut out = Array3::<T>::default((c, side, side));
    out.slice_mut(s![.., oy..oy + h, ox..ox + w]).assign(a);
    out
}

fn src_coord(o: usize, out: usize, inp: usize) -> f32 {
    ((o as f32 + 0.5) * inp as f32 / out as f32 - 0.5).clamp(0.0, (inp - 1) as f32)
}

/// Half-pixel-centred bilinear resize.
pub fn resize_bilinear(a: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, h, w) = a.dim();
    if h == out_h && w == out_w {
        return a.clone();
    }
    let mut out = Array3::<f32>::zeros((c, out_h, out_w));
    for oy in 0..out_h {
        let sy = src_coord(oy, out_h, h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f32;
        for ox in 0..out_w {
            let sx = src_coord(ox, out_w, w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f32;
            for k in 0..c {
                let top = a[[k, y0, x0]] * (1.0 - fx) + a[[k, y0, x1]] * fx;
                let bot = a[[k, y1, x0]] * (1.0 - fx) + a[[k, y1, x1]] * fx;
                out[[k, oy, ox]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Nearest-neighbour resize; keeps binary masks binary.
pub fn resize_nearest<T: Copy + Default>(a: &Array3<T>, out_h: usize, out_w: usize) -> Array3<T> {
    let (c, h, w) = a.dim();
    if h == out_h && w == out_w {
        return a.clone();
    }
    let mut out = Array3::<T>::default((c, out_h, out_w));
    for oy in 0..out_h {
        let sy = (((oy as f64 + 0.5) * h as f64 / out_h as f64) as usize).min(h - 1);
        for ox in 0..out_w {
            let sx = (((ox as f64 + 0.5) * w as f64 / out_w as f64) as usize).min(w - 1);
            for k in 0..c {
                out[[k, oy, ox]] = a[[k, sy, sx]];
            }
        }
    }
    out
}

const BINS: usize = 256;

fn to_ycbcr(image: &Array3<f32>) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
    let (_, h, w) = image.dim();
    let mut y = Array2::zeros((h, w));
    let mut cb = Array2::zeros((h, w));
    let mut cr = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let (r, g, b) = (image[[0, i, j]], image[[1, i, j]], image[[2, i, j]]);
            y[[i, j]] = 0.299 * r + 0.587 * g + 0.114 * b;
            cb[[i, j]] = -0.168_736 * r - 0.331_264 * g + 0.5 * b;
            cr[[i, j]] = 0.5 * r - 0.418_688 * g - 0.081_312 * b;
        }
    }
    (y, cb, cr)
}

fn from_ycbcr(y: &Array2<f32>, cb: &Array2<f32>, cr: &Array2<f32>) -> Array3<f32> {
    let (h, w) = y.dim();
    let mut out = Array3::zeros((3, h, w));
    for i in 0..h {
        for j in 0..w {
            let (l, u, v) = (y[[i, j]], cb[[i, j]], cr[[i, j]]);
            out[[0, i, j]] = (l + 1.402 * v).clamp(0.0, 1.0);
            out[[1, i, j]] = (l - 0.344_136 * u - 0.714_136 * v).clamp(0.0, 1.0);
            out[[2, i, j]] = (l + 1.772 * u).clamp(0.0, 1.0);
        }
    }
    out
}

fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * (BINS - 1) as f32).round() as usize).min(BINS - 1)
}

/// Clipped, redistributed cumulative histogram of one tile, as a lookup table to [0, 1].
fn tile_lut(lum: &Array2<f32>, rows: (usize, usize), cols: (usize, usize), clip_limit: f32) -> Vec<f32> {
    let mut hist = vec![0f32; BINS];
    for i in rows.0..rows.1 {
        for j in cols.0..cols.1 {
            hist[bin_of(lum[[i, j]])] += 1.0;
        }
    }
    let n = ((rows.1 - rows.0) * (cols.1 - cols.0)) as f32;
    let limit = (clip_limit * n / BINS as f32).max(1.0);
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / BINS as f32;
    let mut acc = 0.0;
    hist.iter()
        .map(|h| {
            acc += h + share;
            (acc / n).min(1.0)
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization of one channel in [0, 1].
pub fn clahe(lum: &Array2<f32>, tiles: usize, clip_limit: f32) -> Array2<f32> {
    let (h, w) = lum.dim();
    let ty = tiles.clamp(1, h);
    let tx = tiles.clamp(1, w);
    let row_edges: Vec<usize> = (0..=ty).map(|k| k * h / ty).collect();
    let col_edges: Vec<usize> = (0..=tx).map(|k| k * w / tx).collect();
    let mut luts = Vec::with_capacity(ty * tx);
    for a in 0..ty {
        for b in 0..tx {
            luts.push(tile_lut(
                lum,
                (row_edges[a], row_edges[a + 1]),
                (col_edges[b], col_edges[b + 1]),
                clip_limit,
            ));
        }
    }
    let centers = |edges: &[usize]| -> Vec<f32> {
        edges.windows(2).map(|e| (e[0] + e[1]) as f32 / 2.0 - 0.5).collect()
    };
    let cy = centers(&row_edges);
    let cx = centers(&col_edges);
    // neighbouring tile indices and interpolation weight along one axis
    let locate = |p: f32, c: &[f32]| -> (usize, usize, f32) {
        if p <= c[0] {
            return (0, 0, 0.0);
        }
        if p >= c[c.len() - 1] {
            return (c.len() - 1, c.len() - 1, 0.0);
        }
        let k = c.iter().rposition(|&v| v <= p).expect("p above first centre");
        (k, k + 1, (p - c[k]) / (c[k + 1] - c[k]))
    };
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        let (a0, a1, fy) = locate(i as f32, &cy);
        for j in 0..w {
            let (b0, b1, fx) = locate(j as f32, &cx);
            let bin = bin_of(lum[[i, j]]);
            let v00 = luts[a0 * tx + b0][bin];
            let v01 = luts[a0 * tx + b1][bin];
            let v10 = luts[a1 * tx + b0][bin];
            let v11 = luts[a1 * tx + b1][bin];
            let top = v00 * (1.0 - fx) + v01 * fx;
            let bot = v10 * (1.0 - fx) + v11 * fx;
            out[[i, j]] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
        }
    }
    out
}

/// Equalizes the luminance of an RGB image and converts back; output in [0, 1].
pub fn enhance(image: &Array3<f32>, cfg: &PreprocessConfig) -> Array3<f32> {
    let (y, cb, cr) = to_ycbcr(image);
    let y = clahe(&y, cfg.clahe_tiles, cfg.clahe_clip_limit);
    from_ycbcr(&y, &cb, &cr)
}

/// Full preprocessing of an image and optional mask to `cfg.input_size` squared.
pub fn preprocess(
    image: &Array3<f32>,
    mask: Option<&Array3<u8>>,
    cfg: &PreprocessConfig,
) -> Result<(Array3<f32>, Option<Array3<u8>>)> {
    let (img, bbox) = crop_black_border(image, cfg.border_threshold)?;
    let img = pad_to_square(&img);
    let img = if cfg.enhance { enhance(&img, cfg) } else { img };
    let s = cfg.input_size;
    let img = resize_bilinear(&img, s, s);
    let mask = mask.map(|m| {
        let m = pad_to_square(&bbox.apply(m));
        resize_nearest(&m, s, s)
    });
    Ok((img, mask))
}

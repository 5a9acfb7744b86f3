//! Reading images and lesion rasters from disk.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::data::manifest::{DatasetManifest, ManifestEntry};
use crate::data::mask::encode_mask;
use crate::data::preprocess::{preprocess, PreprocessConfig};
use crate::data::FundusSample;
use crate::error::{Error, Result};
use crate::lesion::Lesion;

/// RGB image as (3, H, W) in [0, 1].
pub fn load_rgb(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.into_raw();
    Ok(Array3::from_shape_fn((3, h, w), |(k, y, x)| raw[(y * w + x) * 3 + k] as f32 / 255.0))
}

/// Lesion raster as (H, W); the per-pixel maximum over colour channels.
pub fn load_raster(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.into_raw();
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let p = &raw[(y * w + x) * 3..(y * w + x) * 3 + 3];
        p[0].max(p[1]).max(p[2])
    }))
}

/// Loads and preprocesses the sample referenced by a manifest entry.
pub fn load_entry(manifest: &DatasetManifest, entry: &ManifestEntry, cfg: &PreprocessConfig) -> Result<FundusSample> {
    let image = load_rgb(&manifest.resolve(&entry.image))?;
    let (_, h, w) = image.dim();
    let mask = if manifest.kind.has_masks() {
        let mut rasters: [Option<Array2<u8>>; 4] = Default::default();
        for l in Lesion::ALL {
            if let Some(p) = entry.masks.get(&l) {
                rasters[l.channel()] = Some(load_raster(&manifest.resolve(p))?);
            }
        }
        Some(encode_mask(&rasters, (h, w))?)
    } else {
        None
    };
    let (image, mask) = preprocess(&image, mask.as_ref(), cfg)?;
    FundusSample::new(entry.id.clone(), image, mask, entry.label, entry.split)
}

/// Writes a (3, H, W) image in [0, 1] as 8-bit RGB.
pub fn save_rgb(path: &Path, image: &Array3<f32>) -> Result<()> {
    let (_, h, w) = image.dim();
    let mut buf = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for k in 0..3 {
                buf.push((image[[k, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to image");
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Writes a single-channel map in [0, 1] as 8-bit grayscale.
pub fn save_gray(path: &Path, map: &Array2<f32>) -> Result<()> {
    let (h, w) = map.dim();
    let buf: Vec<u8> = map.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to map");
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Writes a binary raster with values {0, 255}.
pub fn save_binary(path: &Path, mask: &Array2<u8>) -> Result<()> {
    let (h, w) = mask.dim();
    let buf: Vec<u8> = mask.iter().map(|&v| if v > 0 { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to mask");
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

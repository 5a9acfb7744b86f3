//! Fundus samples: dataset manifests, image/mask loading, preprocessing and
//! augmentation.

pub mod augment;
pub mod io;
pub mod manifest;
pub mod mask;
pub mod preprocess;
pub mod synth;

use candle_core::{Device, Tensor};
use ndarray::{Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use augment::{augment, AugmentConfig};
pub use manifest::{build_manifest, DatasetKind, DatasetManifest, ManifestEntry};
pub use mask::encode_mask;
pub use preprocess::{crop_black_border, enhance, pad_to_square, resize_bilinear, resize_nearest, CropBox, PreprocessConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "val" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Binary screening label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScreenLabel {
    NoDR,
    NPDR,
}

impl ScreenLabel {
    pub fn index(self) -> usize {
        match self {
            ScreenLabel::NoDR => 0,
            ScreenLabel::NPDR => 1,
        }
    }

    /// ICDR grade to screening label; grades 4 (proliferative) and 5
    /// (ungradable) have no screening label.
    pub fn from_grade(grade: u8) -> Option<Self> {
        match grade {
            0 => Some(ScreenLabel::NoDR),
            1..=3 => Some(ScreenLabel::NPDR),
            _ => None,
        }
    }
}

/// One preprocessed fundus image, its lesion mask and optional screening label.
///
/// `image` is (3, H, W) in [0, 1]; `mask` is (4, H, W) in {0, 1}, channels EX, HE, MA, SE.
#[derive(Debug, Clone, PartialEq)]
pub struct FundusSample {
    pub id: String,
    pub image: Array3<f32>,
    pub mask: Option<Array3<u8>>,
    pub screen_label: Option<ScreenLabel>,
    pub split: Split,
}

impl FundusSample {
    pub fn new(
        id: impl Into<String>,
        image: Array3<f32>,
        mask: Option<Array3<u8>>,
        screen_label: Option<ScreenLabel>,
        split: Split,
    ) -> Result<Self> {
        let s = Self {
            id: id.into(),
            image,
            mask,
            screen_label,
            split,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.dim().0 != 3 {
            return Err(Error::Shape(format!("image must have 3 channels, got {}", self.image.dim().0)));
        }
        if let Some(m) = &self.mask {
            let (c, h, w) = m.dim();
            let (_, ih, iw) = self.image.dim();
            if c != 4 || h != ih || w != iw {
                return Err(Error::Shape(format!(
                    "mask {c}x{h}x{w} does not match image 3x{ih}x{iw}"
                )));
            }
            if m.iter().any(|&v| v > 1) {
                return Err(Error::InvalidValue("mask values must be 0 or 1".into()));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.image.dim();
        (h, w)
    }
}

/// Deterministic per-sample seed from the run seed, the sample id and the epoch.
pub fn sample_seed(global: u64, id: &str, epoch: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update((epoch as u64).to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

/// Stacks sample images into an (N, 3, H, W) f32 tensor.
pub fn stack_images(samples: &[&FundusSample], device: &Device) -> Result<Tensor> {
    let views: Vec<_> = samples.iter().map(|s| s.image.view().insert_axis(Axis(0))).collect();
    let arr = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let shape = arr.shape().to_vec();
    let data: Vec<f32> = arr.iter().copied().collect();
    Ok(Tensor::from_vec(data, shape, device)?)
}

/// Stacks sample masks into an (N, 4, H, W) f32 tensor of zeros and ones.
pub fn stack_masks(samples: &[&FundusSample], device: &Device) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims = None;
    for s in samples {
        let m = s
            .mask
            .as_ref()
            .ok_or_else(|| Error::InvalidValue(format!("sample `{}` has no mask", s.id)))?;
        dims = Some(m.dim());
        data.extend(m.iter().map(|&v| v as f32));
    }
    let (c, h, w) = dims.ok_or_else(|| Error::InvalidValue("empty batch".into()))?;
    Ok(Tensor::from_vec(data, (samples.len(), c, h, w), device)?)
}

/// Loads and preprocesses every entry of one split, in manifest order.
pub fn load_split(manifest: &DatasetManifest, split: Split, cfg: &PreprocessConfig) -> Result<Vec<FundusSample>> {
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| e.split == split).collect();
    if entries.is_empty() {
        return Err(Error::NoEntries {
            dataset: manifest.kind.name().to_string(),
            split: split.name().to_string(),
        });
    }
    entries
        .par_iter()
        .map(|e| io::load_entry(manifest, e, cfg))
        .collect()
}

//! LANet encoder-decoder and its screening extension.
//!
//! Decoder stage 0 refines the head attention output of the deepest encoder
//! feature; stage `i > 0` fuses encoder stage `4 - i` with decoder stage `i - 1`
//! and refines the result. Every stage emits a four-channel lesion map through
//! its own 1×1 head; the final prediction is the deepest head resized to the
//! input resolution.

pub mod attention;
pub mod encoder;
pub mod fpm;

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lesion::NUM_LESIONS;
use crate::nn::{bilinear_resize, global_avg_pool, sigmoid, Conv2d, ConvBnRelu, Linear, ParamStore, Scope};

pub use attention::{AttentionVector, Ham, Lam, LamParts};
pub use encoder::{Backbone, Encoder, STAGE_STRIDES};
pub use fpm::{Ffb, Fpb};

/// Number of decoder stages.
pub const DECODER_DEPTH: usize = 4;

/// Architecture selection: ablation toggles, backbone and widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelVariant {
    pub use_lam: bool,
    pub use_fpm: bool,
    pub backbone: String,
    pub input_size: usize,
    pub decoder_channels: [usize; 4],
    pub num_lesions: usize,
    pub screening_head: bool,
    pub screening_hidden: usize,
}

impl Default for ModelVariant {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelVariant {
    /// LANet with the ResNet-50 encoder at 512×512.
    pub fn full() -> Self {
        Self {
            use_lam: true,
            use_fpm: true,
            backbone: Backbone::Resnet50.name().to_string(),
            input_size: 512,
            decoder_channels: [256, 128, 64, 64],
            num_lesions: NUM_LESIONS,
            screening_head: false,
            screening_hidden: 64,
        }
    }

    /// Small encoder and narrow decoder for CPU-scale experiments.
    pub fn desk(input_size: usize) -> Self {
        Self {
            backbone: Backbone::ResnetSmall.name().to_string(),
            input_size,
            decoder_channels: [32, 32, 16, 16],
            screening_hidden: 16,
            ..Self::full()
        }
    }

    pub fn with_modules(mut self, use_lam: bool, use_fpm: bool) -> Self {
        self.use_lam = use_lam;
        self.use_fpm = use_fpm;
        self
    }

    pub fn with_screening_head(mut self, on: bool) -> Self {
        self.screening_head = on;
        self
    }

    /// Table-3 style name of the ablation cell.
    pub fn ablation_name(&self) -> &'static str {
        match (self.use_lam, self.use_fpm) {
            (false, false) => "Base",
            (true, false) => "Base+LAM",
            (false, true) => "Base+FPM",
            (true, true) => "Base+LAM+FPM",
        }
    }

    /// The four ablation cells of this configuration, Base first.
    pub fn ablation_matrix(&self) -> [ModelVariant; 4] {
        [
            self.clone().with_modules(false, false),
            self.clone().with_modules(true, false),
            self.clone().with_modules(false, true),
            self.clone().with_modules(true, true),
        ]
    }

    pub fn validate(&self) -> Result<Backbone> {
        let backbone = Backbone::parse(&self.backbone)?;
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "input size {} is not a positive multiple of 32",
                self.input_size
            )));
        }
        if self.num_lesions != NUM_LESIONS {
            return Err(Error::Config(format!("num_lesions must be {NUM_LESIONS}")));
        }
        if self.decoder_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        if self.screening_head && self.screening_hidden == 0 {
            return Err(Error::Config("screening_hidden must be positive".into()));
        }
        Ok(backbone)
    }

    /// Spatial side of decoder stage `s` (0-based): input / 32, /16, /8, /4.
    pub fn stage_size(&self, s: usize) -> usize {
        self.input_size / STAGE_STRIDES[DECODER_DEPTH - 1 - s]
    }

    /// This variant without the screening head.
    pub fn segmentation_only(&self) -> Self {
        Self {
            screening_head: false,
            ..self.clone()
        }
    }
}

/// Precision and device for model parameters.
#[derive(Debug, Clone)]
pub struct ModelInit {
    pub seed: u64,
    pub dtype: DType,
    pub device: Device,
}

impl Default for ModelInit {
    fn default() -> Self {
        Self {
            seed: 0,
            dtype: DType::F32,
            device: Device::Cpu,
        }
    }
}

/// Per-stage lesion maps (N, 4, h_s, w_s) and the final map at input resolution.
#[derive(Debug, Clone)]
pub struct LesionOutput {
    pub per_stage: Vec<Tensor>,
    pub final_map: Tensor,
}

/// Everything a forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub encoder: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
    pub lesions: LesionOutput,
}

#[derive(Debug, Clone)]
enum Refine {
    Lam(Lam),
    Conv(ConvBnRelu),
}

impl Refine {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Refine::Lam(l) => l.forward(x, train),
            Refine::Conv(c) => c.forward(x, train),
        }
    }
}

#[derive(Debug, Clone)]
enum Fusion {
    Fpm { fpb: Fpb, ffb: Ffb },
    /// Bilinear upsampling plus a 1×1 channel-matching convolution.
    Bilinear(ConvBnRelu),
}

#[derive(Debug, Clone)]
struct Stage {
    fusion: Option<Fusion>,
    refine: Refine,
    head: Conv2d,
}

#[derive(Debug, Clone)]
struct ScreeningHead {
    fc1: Linear,
    fc2: Linear,
}

/// A built LANet (or LASNet when the variant carries the screening head).
#[derive(Debug, Clone)]
pub struct Lanet {
    variant: ModelVariant,
    store: ParamStore,
    encoder: Encoder,
    ham: Ham,
    stages: Vec<Stage>,
    screening: Option<ScreeningHead>,
}

/// Builds a model with default initialization (seed 0, f32, CPU).
pub fn build_variant(variant: &ModelVariant) -> Result<Lanet> {
    Lanet::new(variant, &ModelInit::default())
}

impl Lanet {
    pub fn new(variant: &ModelVariant, init: &ModelInit) -> Result<Self> {
        let backbone = variant.validate()?;
        let store = ParamStore::new(init.dtype, init.device.clone(), init.seed);
        let root = store.root();
        let encoder = Encoder::new(&root.pp("encoder"), backbone)?;
        let enc_ch = backbone.stage_channels();
        let widths = variant.decoder_channels;
        let ham = Ham::new(&root.pp("ham"), enc_ch[3], widths[0])?;

        let mut stages = Vec::with_capacity(DECODER_DEPTH);
        for (i, &width) in widths.iter().enumerate() {
            let scope = root.pp("decoder").pp(format!("stage{i}"));
            let fusion = if i == 0 {
                None
            } else if variant.use_fpm {
                Some(Fusion::Fpm {
                    fpb: Fpb::new(&scope.pp("fpb"), enc_ch[3], widths[i - 1], widths[i - 1])?,
                    ffb: Ffb::new(&scope.pp("ffb"), enc_ch[3 - i], widths[i - 1], width)?,
                })
            } else {
                Some(Fusion::Bilinear(ConvBnRelu::new(
                    &scope.pp("upsample"),
                    widths[i - 1],
                    width,
                    (1, 1),
                )?))
            };
            let refine = if variant.use_lam {
                Refine::Lam(Lam::new(&scope.pp("lam"), width)?)
            } else {
                Refine::Conv(ConvBnRelu::new(&scope.pp("conv"), width, width, (3, 3))?)
            };
            let head = Conv2d::new(&scope.pp("head"), width, variant.num_lesions, (1, 1), 1, true)?;
            stages.push(Stage { fusion, refine, head });
        }

        let screening = if variant.screening_head {
            let pooled: usize = widths.iter().sum();
            let scope = root.pp("screening");
            Some(ScreeningHead {
                fc1: Linear::new(&scope.pp("fc1"), pooled, variant.screening_hidden)?,
                fc2: Linear::new(&scope.pp("fc2"), variant.screening_hidden, 2)?,
            })
        } else {
            None
        };

        Ok(Self {
            variant: variant.clone(),
            store,
            encoder,
            ham,
            stages,
            screening,
        })
    }

    pub fn variant(&self) -> &ModelVariant {
        &self.variant
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn ham(&self) -> &Ham {
        &self.ham
    }

    /// Lesion-aware module of stage `s`, absent when the variant replaces it.
    pub fn lam(&self, s: usize) -> Option<&Lam> {
        match &self.stages.get(s)?.refine {
            Refine::Lam(l) => Some(l),
            Refine::Conv(_) => None,
        }
    }

    /// FPB and FFB of stage `s` (1..=3), absent for Base-style fusion.
    pub fn fpm(&self, s: usize) -> Option<(&Fpb, &Ffb)> {
        match self.stages.get(s)?.fusion.as_ref()? {
            Fusion::Fpm { fpb, ffb } => Some((fpb, ffb)),
            Fusion::Bilinear(_) => None,
        }
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let (_, c, h, w) = image.dims4()?;
        let s = self.variant.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::Shape(format!("model expects (N, 3, {s}, {s}), got {:?}", image.dims())));
        }
        Ok(())
    }

    /// Full forward pass over a batch (N, 3, S, S).
    pub fn forward_full(&self, image: &Tensor, train: bool) -> Result<ForwardOutput> {
        self.check_input(image)?;
        let image = image.to_dtype(self.dtype())?;
        let enc = self.encoder.forward(&image, train)?;
        let x_enc4 = &enc[3];

        let mut decoder: Vec<Tensor> = Vec::with_capacity(DECODER_DEPTH);
        let mut per_stage = Vec::with_capacity(DECODER_DEPTH);
        for (i, stage) in self.stages.iter().enumerate() {
            let fused = match (&stage.fusion, decoder.last()) {
                (None, _) => self.ham.forward(x_enc4, train)?,
                (Some(Fusion::Fpm { fpb, ffb }), Some(prev)) => {
                    let gate = fpb.forward(x_enc4, prev)?;
                    ffb.forward(&enc[3 - i], prev, &gate, train)?
                }
                (Some(Fusion::Bilinear(conv)), Some(prev)) => {
                    let (_, _, h, w) = prev.dims4()?;
                    conv.forward(&bilinear_resize(prev, 2 * h, 2 * w)?, train)?
                }
                (Some(_), None) => unreachable!("stage 0 has no fusion"),
            };
            let x_dec = stage.refine.forward(&fused, train)?;
            per_stage.push(sigmoid(&stage.head.forward(&x_dec)?)?);
            decoder.push(x_dec);
        }
        let s = self.variant.input_size;
        let final_map = bilinear_resize(per_stage.last().expect("four stages"), s, s)?;
        Ok(ForwardOutput {
            encoder: enc,
            decoder,
            lesions: LesionOutput { per_stage, final_map },
        })
    }

    pub fn forward(&self, image: &Tensor, train: bool) -> Result<LesionOutput> {
        Ok(self.forward_full(image, train)?.lesions)
    }

    /// Lesion maps plus NoDR/NPDR logits (N, 2) from the pooled decoder features.
    pub fn forward_screening(&self, image: &Tensor, train: bool) -> Result<(LesionOutput, Tensor)> {
        let head = self.screening.as_ref().ok_or(Error::NoScreeningHead)?;
        let out = self.forward_full(image, train)?;
        let pooled = out
            .decoder
            .iter()
            .map(|d| global_avg_pool(d)?.flatten_from(1).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        let pooled = Tensor::cat(&pooled, 1)?;
        let logits = head.fc2.forward(&head.fc1.forward(&pooled)?.relu()?)?;
        Ok((out.lesions, logits))
    }

    /// Every parameter and buffer by hierarchical name.
    pub fn state_dict(&self) -> Result<BTreeMap<String, Tensor>> {
        Ok(self
            .store
            .entries()
            .into_iter()
            .map(|(k, p)| (k, p.var.as_tensor().copy().expect("cpu copy")))
            .collect())
    }

    /// Replaces all weights; the key set and shapes must match exactly.
    pub fn load_state_dict(&self, weights: &BTreeMap<String, Tensor>) -> Result<()> {
        let names = self.store.names();
        let missing: Vec<_> = names.iter().filter(|n| !weights.contains_key(*n)).collect();
        let extra: Vec<_> = weights.keys().filter(|k| self.store.get(k).is_none()).collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Incompatible(format!(
                "{} missing keys (first: {:?}), {} unexpected keys (first: {:?})",
                missing.len(),
                missing.first(),
                extra.len(),
                extra.first()
            )));
        }
        for (k, v) in weights {
            self.store.assign(k, v)?;
        }
        Ok(())
    }

    /// Copies every entry of `weights` whose name exists in this model. Returns
    /// the names of this model's entries that were not covered.
    pub fn load_shared(&self, weights: &BTreeMap<String, Tensor>) -> Result<Vec<String>> {
        let mut uncovered = Vec::new();
        for name in self.store.names() {
            match weights.get(&name) {
                Some(v) => self.store.assign(&name, v)?,
                None => uncovered.push(name),
            }
        }
        Ok(uncovered)
    }

    /// Loads encoder weights from a safetensors file with torchvision ResNet
    /// key names (`conv1.weight`, `layer1.0.bn1.running_mean`, ...).
    pub fn load_encoder_weights(&self, path: &Path) -> Result<usize> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, self.device())?;
        let mut loaded = 0;
        for name in self.store.names() {
            let Some(key) = name.strip_prefix("encoder.") else { continue };
            let t = tensors
                .get(key)
                .ok_or_else(|| Error::Incompatible(format!("encoder weights lack `{key}`")))?;
            self.store.assign(&name, t)?;
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// Convenience: a zero image batch of the variant's input size.
pub fn zero_batch(variant: &ModelVariant, n: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let s = variant.input_size;
    Ok(Tensor::zeros((n, 3, s, s), dtype, device)?)
}

/// A fresh scope on a throwaway store, for building blocks in isolation.
pub fn scratch_scope(seed: u64, dtype: DType) -> Scope {
    ParamStore::new(dtype, Device::Cpu, seed).root()
}

#[cfg(test)]
mod tests;

//! Checkpoints: one safetensors file holding weights (`weights/…`), optional
//! optimizer state (`optim/…`) and a JSON header in the file metadata.
//!
//! Serialization is deterministic, so save → load → save yields identical bytes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::preprocess::PreprocessConfig;
use crate::error::{Error, Result};
use crate::lesion::lesion_order;
use crate::model::{Lanet, ModelInit, ModelVariant};
use crate::optim::Optimizer;

const HEADER_KEY: &str = "lanet";
const FORMAT: &str = "lanet-checkpoint";
const VERSION: u32 = 1;
const WEIGHTS: &str = "weights/";
const OPTIM: &str = "optim/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMetric {
    pub name: String,
    pub value: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub variant: ModelVariant,
    pub lesion_order: Vec<String>,
    pub preprocess: PreprocessConfig,
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
    pub best: Option<BestMetric>,
    pub optimizer: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub weights: BTreeMap<String, Tensor>,
    pub optim: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Lanet,
        preprocess: &PreprocessConfig,
        epoch: usize,
        step: usize,
        best: Option<BestMetric>,
        optimizer: Option<&Optimizer>,
    ) -> Result<Self> {
        Ok(Self {
            header: CheckpointHeader {
                format: FORMAT.into(),
                version: VERSION,
                variant: model.variant().clone(),
                lesion_order: lesion_order(),
                preprocess: preprocess.clone(),
                seed: model.store().seed(),
                epoch,
                step,
                best,
                optimizer: optimizer.map(|o| o.config().kind.name().to_string()),
            },
            weights: model.state_dict()?,
            optim: match optimizer {
                Some(o) => o.state_dict()?,
                None => BTreeMap::new(),
            },
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_string(&self.header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta = HashMap::from([(HEADER_KEY.to_string(), header)]);
        let tensors: Vec<(String, &Tensor)> = self
            .weights
            .iter()
            .map(|(k, v)| (format!("{WEIGHTS}{k}"), v))
            .chain(self.optim.iter().map(|(k, v)| (format!("{OPTIM}{k}"), v)))
            .collect();
        safetensors::serialize(tensors, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, meta) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let header = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(HEADER_KEY))
            .ok_or_else(|| Error::Checkpoint("missing checkpoint header".into()))?;
        let header: CheckpointHeader = serde_json::from_str(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format {} v{}", header.format, header.version)));
        }
        if header.lesion_order != lesion_order() {
            return Err(Error::Incompatible(format!("lesion order {:?}", header.lesion_order)));
        }
        let all = candle_core::safetensors::load_buffer(bytes, &Device::Cpu)?;
        let mut weights = BTreeMap::new();
        let mut optim = BTreeMap::new();
        for (k, v) in all {
            if let Some(n) = k.strip_prefix(WEIGHTS) {
                weights.insert(n.to_string(), v);
            } else if let Some(n) = k.strip_prefix(OPTIM) {
                optim.insert(n.to_string(), v);
            } else {
                return Err(Error::Checkpoint(format!("unexpected tensor `{k}`")));
            }
        }
        Ok(Self { header, weights, optim })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Builds the model described by the header and loads the weights into it.
    pub fn build_model(&self) -> Result<Lanet> {
        let dtype = self
            .weights
            .values()
            .next()
            .map(|t| t.dtype())
            .ok_or_else(|| Error::Checkpoint("checkpoint has no weights".into()))?;
        let model = Lanet::new(
            &self.header.variant,
            &ModelInit {
                seed: self.header.seed,
                dtype,
                device: Device::Cpu,
            },
        )?;
        model.load_state_dict(&self.weights)?;
        Ok(model)
    }

    /// Loads the weights into an existing model whose variant must match exactly.
    pub fn load_into(&self, model: &Lanet) -> Result<()> {
        if model.variant() != &self.header.variant {
            return Err(Error::Incompatible(format!(
                "checkpoint variant {} ({}) does not match model variant {} ({})",
                self.header.variant.ablation_name(),
                self.header.variant.backbone,
                model.variant().ablation_name(),
                model.variant().backbone
            )));
        }
        model.load_state_dict(&self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let v = ModelVariant::desk(64);
        let model = Lanet::new(&v, &ModelInit::default()).unwrap();
        let ckpt = Checkpoint::from_model(&model, &PreprocessConfig::default(), 3, 17, None, None).unwrap();
        let a = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&a).unwrap();
        assert_eq!(back.header, ckpt.header);
        assert_eq!(back.to_bytes().unwrap(), a);
        let rebuilt = back.build_model().unwrap();
        let x = crate::model::zero_batch(&v, 1, candle_core::DType::F32, &Device::Cpu).unwrap();
        let y0: Vec<f32> = model.forward(&x, false).unwrap().final_map.flatten_all().unwrap().to_vec1().unwrap();
        let y1: Vec<f32> = rebuilt.forward(&x, false).unwrap().final_map.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(y0, y1);
    }

    #[test]
    fn variant_mismatch_is_explicit() {
        let v = ModelVariant::desk(64);
        let full = Lanet::new(&v, &ModelInit::default()).unwrap();
        let base = Lanet::new(&v.clone().with_modules(false, false), &ModelInit::default()).unwrap();
        let ckpt = Checkpoint::from_model(&full, &PreprocessConfig::default(), 0, 0, None, None).unwrap();
        assert!(matches!(ckpt.load_into(&base), Err(Error::Incompatible(_))));
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
    }
}

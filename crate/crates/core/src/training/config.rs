//! Experiment configuration: one TOML file per run plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::augment::AugmentConfig;
use crate::data::preprocess::PreprocessConfig;
use crate::error::{Error, Result};
use crate::losses::{SegLossConfig, SmoothingConfig};
use crate::metrics::ApMode;
use crate::model::ModelVariant;
use crate::optim::OptimizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Images per split: train, valid, test.
    pub counts: [usize; 3],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            counts: [16, 4, 8],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// `IDRiD-Seg`, `DDR-Seg`, `FGADR-Seg`, `DDR-Scr`, or `synthetic` for generated data.
    pub kind: String,
    pub root: Option<PathBuf>,
    /// A manifest written by `prepare`; takes precedence over `root`.
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: "synthetic".into(),
            root: None,
            manifest: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn is_synthetic(&self) -> bool {
        self.kind.eq_ignore_ascii_case("synthetic")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub freeze_encoder: bool,
    /// Validation accuracy used to report epochs-to-threshold.
    pub accuracy_target: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            optimizer: OptimizerConfig::screening(),
            freeze_encoder: false,
            accuracy_target: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f32,
    pub ap_mode: ApMode,
    /// Write a colour overlay per evaluated image.
    pub overlays: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            ap_mode: ApMode::Pooled,
            overlays: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1.0, 5.0, 10.0, 15.0],
        }
    }
}

/// Everything that defines a run. `input_size` is authoritative and is copied
/// into `variant` and `preprocess` by [`ExperimentConfig::normalized`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub input_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops segmentation training after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Validate every this many epochs (the last epoch is always validated).
    pub eval_every: usize,
    /// Relative paths are resolved against the run directory.
    pub checkpoint_dir: PathBuf,
    /// Optional safetensors file with ImageNet-pretrained encoder weights.
    pub encoder_weights: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub variant: ModelVariant,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub seg_loss: SegLossConfig,
    pub smoothing: SmoothingConfig,
    pub optimizer: OptimizerConfig,
    pub screening: ScreeningConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            input_size: 512,
            batch_size: 8,
            epochs: 60,
            max_steps: None,
            eval_every: 1,
            checkpoint_dir: PathBuf::from("checkpoints"),
            encoder_weights: None,
            dataset: DatasetConfig::default(),
            variant: ModelVariant::full(),
            preprocess: PreprocessConfig::default(),
            augment: AugmentConfig::default(),
            seg_loss: SegLossConfig::default(),
            smoothing: SmoothingConfig::default(),
            optimizer: OptimizerConfig::segmentation(),
            screening: ScreeningConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small synthetic setup that trains in seconds on a CPU.
    pub fn desk(input_size: usize) -> Self {
        Self {
            input_size,
            batch_size: 4,
            epochs: 10,
            variant: ModelVariant::desk(input_size),
            ..Self::default()
        }
        .normalized()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key.path=value` overrides on top, then fills defaults.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let cfg = cfg.normalized();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn normalized(mut self) -> Self {
        self.variant.input_size = self.input_size;
        self.preprocess.input_size = self.input_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.variant.input_size != self.input_size || self.preprocess.input_size != self.input_size {
            return Err(Error::Config("input sizes disagree; set the top-level input_size".into()));
        }
        self.variant.validate()?;
        self.seg_loss.validate()?;
        self.smoothing.validate()?;
        self.optimizer.validate()?;
        self.screening.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config("eval.threshold must be in [0, 1]".into()));
        }
        if self.sweep.alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config("sweep alphas must be positive".into()));
        }
        if !self.dataset.is_synthetic() {
            crate::data::manifest::DatasetKind::parse(&self.dataset.kind)?;
            if self.dataset.root.is_none() && self.dataset.manifest.is_none() {
                return Err(Error::Config("dataset.root or dataset.manifest is required".into()));
            }
        }
        Ok(())
    }
}

/// Sets `a.b.c = value` in a TOML table. The value is parsed as a TOML literal
/// when possible (`3`, `true`, `[1, 2]`, `"x"`) and taken as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

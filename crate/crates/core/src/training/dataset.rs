//! Sample access for training and evaluation: in-memory sets or lazy loading
//! through a manifest.

use std::sync::Arc;

use rayon::prelude::*;

use crate::data::manifest::{build_manifest, DatasetKind, DatasetManifest};
use crate::data::preprocess::PreprocessConfig;
use crate::data::synth::{synth_samples, synth_screening_samples, SynthConfig};
use crate::data::{io, FundusSample, Split};
use crate::error::{Error, Result};
use crate::training::config::ExperimentConfig;

/// What the samples will be used for; decides which labels must be present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Segmentation,
    Screening,
}

#[derive(Debug, Clone)]
pub enum SampleSet {
    Memory(Arc<Vec<FundusSample>>),
    Manifest {
        manifest: Arc<DatasetManifest>,
        entries: Vec<usize>,
        preprocess: PreprocessConfig,
    },
}

impl SampleSet {
    pub fn memory(samples: Vec<FundusSample>) -> Self {
        SampleSet::Memory(Arc::new(samples))
    }

    pub fn from_manifest(manifest: Arc<DatasetManifest>, split: Split, preprocess: &PreprocessConfig) -> Self {
        let entries = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect();
        SampleSet::Manifest {
            manifest,
            entries,
            preprocess: preprocess.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SampleSet::Memory(v) => v.len(),
            SampleSet::Manifest { entries, .. } => entries.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self, i: usize) -> &str {
        match self {
            SampleSet::Memory(v) => &v[i].id,
            SampleSet::Manifest { manifest, entries, .. } => &manifest.entries[entries[i]].id,
        }
    }

    pub fn get(&self, i: usize) -> Result<FundusSample> {
        match self {
            SampleSet::Memory(v) => Ok(v[i].clone()),
            SampleSet::Manifest {
                manifest,
                entries,
                preprocess,
            } => io::load_entry(manifest, &manifest.entries[entries[i]], preprocess),
        }
    }

    /// Loads several samples in parallel, in the given order.
    pub fn get_many(&self, idx: &[usize]) -> Result<Vec<FundusSample>> {
        idx.par_iter().map(|&i| self.get(i)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub dataset: String,
    pub train: SampleSet,
    pub valid: SampleSet,
    pub test: SampleSet,
}

impl Splits {
    pub fn memory(dataset: &str, train: Vec<FundusSample>, valid: Vec<FundusSample>, test: Vec<FundusSample>) -> Self {
        Self {
            dataset: dataset.into(),
            train: SampleSet::memory(train),
            valid: SampleSet::memory(valid),
            test: SampleSet::memory(test),
        }
    }

    pub fn get(&self, split: Split) -> &SampleSet {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn require(&self, split: Split) -> Result<&SampleSet> {
        let s = self.get(split);
        if s.is_empty() {
            return Err(Error::NoEntries {
                dataset: self.dataset.clone(),
                split: split.name().to_string(),
            });
        }
        Ok(s)
    }
}

/// Opens the dataset named by the config, generating it when `kind = "synthetic"`.
pub fn open_dataset(cfg: &ExperimentConfig, purpose: Purpose) -> Result<Splits> {
    let d = &cfg.dataset;
    if d.is_synthetic() {
        let size = cfg.input_size;
        let [a, b, c] = d.synthetic.counts;
        let seed = d.synthetic.seed;
        let make = |n: usize, split: Split, s: u64| match purpose {
            Purpose::Segmentation => synth_samples(&SynthConfig::new(size), n, split, s),
            Purpose::Screening => synth_screening_samples(size, n, split, s),
        };
        return Ok(Splits::memory(
            "synthetic",
            make(a, Split::Train, seed),
            make(b, Split::Valid, seed.wrapping_add(1)),
            make(c, Split::Test, seed.wrapping_add(2)),
        ));
    }
    let kind = DatasetKind::parse(&d.kind)?;
    let manifest = match (&d.manifest, &d.root) {
        (Some(m), _) => DatasetManifest::load(m)?,
        (None, Some(root)) => build_manifest(root, kind)?,
        (None, None) => return Err(Error::Config("dataset.root or dataset.manifest is required".into())),
    };
    if manifest.kind != kind {
        return Err(Error::Config(format!("manifest is {} but config says {}", manifest.kind, kind)));
    }
    match purpose {
        Purpose::Segmentation if !kind.has_masks() => {
            return Err(Error::Config(format!("{kind} has no lesion masks")));
        }
        Purpose::Screening if manifest.entries.iter().any(|e| e.label.is_none()) => {
            return Err(Error::Config(format!("{kind} lacks NoDR/NPDR labels")));
        }
        _ => {}
    }
    let manifest = Arc::new(manifest);
    Ok(Splits {
        dataset: kind.name().to_string(),
        train: SampleSet::from_manifest(manifest.clone(), Split::Train, &cfg.preprocess),
        valid: SampleSet::from_manifest(manifest.clone(), Split::Valid, &cfg.preprocess),
        test: SampleSet::from_manifest(manifest, Split::Test, &cfg.preprocess),
    })
}

//! Run directories: effective config, run metadata, append-only JSONL log,
//! checkpoints and reports.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::training::config::ExperimentConfig;

pub const LOG_FILE: &str = "log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub version: &'a str,
    pub args: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn join(&self, name: impl AsRef<Path>) -> PathBuf {
        self.root.join(name)
    }

    pub fn child(&self, name: &str) -> Result<Self> {
        Self::create(self.root.join(name))
    }

    /// Writes `config.toml` and `run.json` so the run can be relaunched as is.
    pub fn persist_config(&self, cfg: &ExperimentConfig, command: &str, args: Vec<String>) -> Result<()> {
        self.write_text(CONFIG_FILE, &cfg.to_toml()?)?;
        let info = RunInfo {
            command,
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION"),
            args,
        };
        self.write_json(RUN_FILE, &info)
    }

    pub fn checkpoint_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        if cfg.checkpoint_dir.is_absolute() {
            cfg.checkpoint_dir.clone()
        } else {
            self.root.join(&cfg.checkpoint_dir)
        }
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.root.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidValue(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }

    /// Appends one JSON record to `log.jsonl`.
    pub fn log<T: Serialize>(&self, record: &T) -> Result<()> {
        let p = self.root.join(LOG_FILE);
        let line = serde_json::to_string(record).map_err(|e| Error::InvalidValue(e.to_string()))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&p, e))
    }
}

/// Logs to the run directory when there is one.
pub(crate) fn log_opt<T: Serialize>(run: Option<&RunDir>, record: &T) -> Result<()> {
    match run {
        Some(r) => r.log(record),
        None => Ok(()),
    }
}

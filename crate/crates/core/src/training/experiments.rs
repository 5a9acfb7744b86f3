//! The ablation matrix and the α sweep: repeated segmentation runs under one
//! seed and data order, each evaluated on the same held-out stream.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::lesion::{Lesion, NUM_LESIONS};
use crate::metrics::MetricsReport;
use crate::training::config::ExperimentConfig;
use crate::training::dataset::{SampleSet, Splits};
use crate::training::eval::evaluate;
use crate::training::run::RunDir;
use crate::training::seg::train_segmentation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceRow {
    pub name: String,
    /// Dice per lesion in EX, HE, MA, SE order.
    pub dice: [f64; NUM_LESIONS],
    pub map: f64,
    pub report: MetricsReport,
}

impl DiceRow {
    fn from_report(name: String, report: MetricsReport) -> Self {
        Self {
            name,
            dice: Lesion::ALL.map(|l| report.per_lesion.get(&l).map_or(0.0, |m| m.dice)),
            map: report.map_score,
            report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceTable {
    pub title: String,
    pub split: Split,
    pub rows: Vec<DiceRow>,
    /// Every run saw the same batches in the same order.
    pub identical_batches: bool,
    /// Every run was evaluated on the same image stream.
    pub identical_eval_stream: bool,
}

impl DiceTable {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} (Dice on {} split)", self.title, self.split.name());
        let _ = write!(s, "{:<16}", "");
        for l in Lesion::ALL {
            let _ = write!(s, "{:>9}", l.code());
        }
        let _ = writeln!(s, "{:>9}", "mAP");
        for r in &self.rows {
            let _ = write!(s, "{:<16}", r.name);
            for d in r.dice {
                let _ = write!(s, "{d:>9.4}");
            }
            let _ = writeln!(s, "{:>9.4}", r.map);
        }
        let _ = writeln!(
            s,
            "identical batches: {}; identical evaluation stream: {}",
            self.identical_batches, self.identical_eval_stream
        );
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidValue(e.to_string()))
    }
}

fn eval_split(splits: &Splits) -> Result<(Split, &SampleSet)> {
    for s in [Split::Test, Split::Valid] {
        if !splits.get(s).is_empty() {
            return Ok((s, splits.get(s)));
        }
    }
    Err(Error::NoEntries {
        dataset: splits.dataset.clone(),
        split: "test".into(),
    })
}

fn run_many(
    title: &str,
    runs: Vec<(String, ExperimentConfig)>,
    splits: &Splits,
    run: Option<&RunDir>,
) -> Result<DiceTable> {
    let (split, set) = eval_split(splits)?;
    let mut rows = Vec::new();
    let mut hashes = Vec::new();
    let mut streams = Vec::new();
    for (name, cfg) in runs {
        log::info!("{title}: training {name}");
        let child = match run {
            Some(r) => Some(r.child(&name.replace('+', "_"))?),
            None => None,
        };
        if let Some(c) = &child {
            c.persist_config(&cfg, title, Vec::new())?;
        }
        let out = train_segmentation(&cfg, splits, child.as_ref())?;
        let overlay_dir = match (&child, cfg.eval.overlays) {
            (Some(c), true) => Some(c.join("overlays")),
            _ => None,
        };
        let e = evaluate(&out.model, set, &cfg.eval, cfg.batch_size, overlay_dir.as_deref())?;
        if let Some(c) = &child {
            c.write_json("report.json", &e.report)?;
            c.write_text("report.txt", &e.report.to_table())?;
        }
        hashes.push(out.batch_hashes);
        streams.push(e.stream_hash);
        rows.push(DiceRow::from_report(name, e.report));
    }
    let table = DiceTable {
        title: title.into(),
        split,
        rows,
        identical_batches: hashes.windows(2).all(|w| w[0] == w[1]),
        identical_eval_stream: streams.windows(2).all(|w| w[0] == w[1]),
    };
    if let Some(r) = run {
        r.write_json(&format!("{}.json", title), &table)?;
        r.write_text(&format!("{}.txt", title), &table.to_table())?;
    }
    Ok(table)
}

/// Trains Base, Base+LAM, Base+FPM and Base+LAM+FPM with identical seeds and
/// hyperparameters and reports their Dice per lesion.
pub fn run_ablation(cfg: &ExperimentConfig, splits: &Splits, run: Option<&RunDir>) -> Result<DiceTable> {
    let runs = cfg
        .variant
        .ablation_matrix()
        .into_iter()
        .map(|v| {
            let mut c = cfg.clone();
            let name = v.ablation_name().to_string();
            c.variant = v;
            (name, c)
        })
        .collect();
    run_many("ablation", runs, splits, run)
}

/// One training run per positive-class weight α.
pub fn alpha_sweep(cfg: &ExperimentConfig, alphas: &[f64], splits: &Splits, run: Option<&RunDir>) -> Result<DiceTable> {
    if alphas.is_empty() {
        return Err(Error::Config("empty alpha list".into()));
    }
    let runs = alphas
        .iter()
        .map(|&a| {
            let mut c = cfg.clone();
            c.seg_loss.alpha = a;
            (format!("alpha={a}"), c)
        })
        .collect();
    run_many("alpha_sweep", runs, splits, run)
}

//! Command-line front end. [`run`] parses arguments, dispatches to the library
//! and maps the outcome to an exit code: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;

use crate::checkpoint::Checkpoint;
use crate::data::io::{load_rgb, save_gray, save_rgb};
use crate::data::manifest::{build_manifest, DatasetKind};
use crate::data::preprocess::preprocess;
use crate::data::{FundusSample, Split};
use crate::error::{Error, Result};
use crate::lesion::Lesion;
use crate::training::{
    alpha_sweep, evaluate, finetune_screening, open_dataset, overlay, predict, run_ablation, train_segmentation,
    ExperimentConfig, Purpose, RunDir,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lanet", version, about = "Lesion segmentation and DR screening for colour fundus images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by the commands that read an experiment config.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment config (TOML). Defaults apply to anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key after the file is read, e.g. `--set seg_loss.alpha=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run directory for the effective config, logs, checkpoints and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset kind: IDRiD-Seg, DDR-Seg, FGADR-Seg, DDR-Scr or synthetic.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Dataset root directory (read only).
    #[arg(long)]
    pub root: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a dataset directory and write its manifest.
    Prepare {
        /// Dataset root directory (read only).
        #[arg(long)]
        root: PathBuf,
        /// Dataset kind: IDRiD-Seg, DDR-Seg, FGADR-Seg or DDR-Scr.
        #[arg(long)]
        dataset: String,
        /// Manifest file to write.
        #[arg(long, default_value = "manifest.jsonl")]
        out: PathBuf,
    },
    /// Train the segmentation network.
    TrainSeg {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the screening network, from a segmentation checkpoint when `--ckpt` is given.
    TrainScr {
        #[command(flatten)]
        run: RunArgs,
        /// Segmentation checkpoint to initialize from.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// train, valid or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train and evaluate Base, Base+LAM, Base+FPM and Base+LAM+FPM.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train and evaluate one model per α in `sweep.alphas`.
    SweepAlpha {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write lesion probability maps and an overlay for each image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "predictions")]
        out: PathBuf,
        /// Probability at which a pixel is painted in the overlay.
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prepare { .. } => "prepare",
            Command::TrainSeg { .. } => "train-seg",
            Command::TrainScr { .. } => "train-scr",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::SweepAlpha { .. } => "sweep-alpha",
            Command::Predict { .. } => "predict",
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let echoed = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, echoed) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Runs one parsed command. Returns the exit code for outcomes that are not
/// errors as such, like a prediction batch with some unreadable files.
pub fn dispatch(command: Command, args: Vec<String>) -> Result<i32> {
    let name = command.name();
    match command {
        Command::Prepare { root, dataset, out } => {
            let kind = DatasetKind::parse(&dataset)?;
            let manifest = build_manifest(&root, kind)?;
            manifest.save(&out)?;
            print!("{}", manifest.summary());
            println!("manifest written to {}", out.display());
            Ok(EXIT_OK)
        }
        Command::TrainSeg { run } => {
            let (cfg, dir) = start(&run, name, args, |_| Ok(()))?;
            let splits = open_dataset(&cfg, Purpose::Segmentation)?;
            let out = train_segmentation(&cfg, &splits, Some(&dir))?;
            dir.write_json("history.json", &out.history)?;
            if let Some(b) = &out.best {
                println!("best {} {:.4} at epoch {}", b.name, b.value, b.epoch);
            }
            if !splits.test.is_empty() {
                let e = evaluate(&out.model, &splits.test, &cfg.eval, cfg.batch_size, None)?;
                write_report(&dir, &e.report)?;
                print!("{}", e.report.to_table());
            }
            println!("run directory: {}", dir.path().display());
            Ok(EXIT_OK)
        }
        Command::TrainScr { run, ckpt } => {
            let (cfg, dir) = start(&run, name, args, |_| Ok(()))?;
            let seg = ckpt.as_deref().map(Checkpoint::load).transpose()?;
            let splits = open_dataset(&cfg, Purpose::Screening)?;
            let out = finetune_screening(&cfg, seg.as_ref(), &splits, Some(&dir))?;
            dir.write_json("history.json", &out.history)?;
            let target = cfg.screening.accuracy_target;
            match out.epochs_to_accuracy(target) {
                Some(n) => println!("validation accuracy reached {target} after {n} epochs"),
                None => println!("validation accuracy never reached {target}"),
            }
            if !splits.test.is_empty() {
                let e = evaluate(&out.model, &splits.test, &cfg.eval, cfg.batch_size, None)?;
                write_report(&dir, &e.report)?;
                print!("{}", e.report.to_table());
            }
            println!("run directory: {}", dir.path().display());
            Ok(EXIT_OK)
        }
        Command::Eval { run, ckpt, split } => {
            let split = Split::parse(&split)?;
            let ck = Checkpoint::load(&ckpt)?;
            let (cfg, dir) = start(&run, name, args, |cfg| {
                cfg.input_size = ck.header.variant.input_size;
                cfg.variant = ck.header.variant.clone();
                cfg.preprocess = ck.header.preprocess.clone();
                Ok(())
            })?;
            let model = ck.build_model()?;
            let purpose = if cfg.variant.screening_head {
                Purpose::Screening
            } else {
                Purpose::Segmentation
            };
            let splits = open_dataset(&cfg, purpose)?;
            let set = splits.require(split)?;
            let overlays = cfg.eval.overlays.then(|| dir.join("overlays"));
            let e = evaluate(&model, set, &cfg.eval, cfg.batch_size, overlays.as_deref())?;
            write_report(&dir, &e.report)?;
            print!("{}", e.report.to_table());
            Ok(EXIT_OK)
        }
        Command::Ablate { run } => {
            let (cfg, dir) = start(&run, name, args, |_| Ok(()))?;
            let splits = open_dataset(&cfg, Purpose::Segmentation)?;
            print!("{}", run_ablation(&cfg, &splits, Some(&dir))?.to_table());
            Ok(EXIT_OK)
        }
        Command::SweepAlpha { run } => {
            let (cfg, dir) = start(&run, name, args, |_| Ok(()))?;
            let splits = open_dataset(&cfg, Purpose::Segmentation)?;
            print!("{}", alpha_sweep(&cfg, &cfg.sweep.alphas, &splits, Some(&dir))?.to_table());
            Ok(EXIT_OK)
        }
        Command::Predict {
            ckpt,
            out,
            threshold,
            images,
        } => predict_files(&ckpt, &out, threshold, &images, args),
    }
}

/// Resolves the effective config and persists it, with the seed and the
/// invocation, into the run directory before anything is computed.
fn start(
    run: &RunArgs,
    command: &str,
    args: Vec<String>,
    adjust: impl FnOnce(&mut ExperimentConfig) -> Result<()>,
) -> Result<(ExperimentConfig, RunDir)> {
    let mut overrides = Vec::new();
    if let Some(d) = &run.dataset {
        overrides.push(format!("dataset.kind={}", toml_string(d)));
    }
    if let Some(r) = &run.root {
        overrides.push(format!("dataset.root={}", toml_string(&r.to_string_lossy())));
    }
    overrides.extend(run.overrides.iter().cloned());
    let mut cfg = match &run.config {
        Some(p) => ExperimentConfig::load(p, &overrides)?,
        None => ExperimentConfig::from_toml_with_overrides("", &overrides)?,
    };
    adjust(&mut cfg)?;
    let cfg = cfg.normalized();
    cfg.validate()?;
    let dir = RunDir::create(run.out.clone().unwrap_or_else(|| Path::new("runs").join(command)))?;
    dir.persist_config(&cfg, command, args)?;
    Ok((cfg, dir))
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn write_report(dir: &RunDir, report: &crate::metrics::MetricsReport) -> Result<()> {
    dir.write_text("report.json", &(report.to_json()? + "\n"))?;
    dir.write_text("report.txt", &report.to_table())
}

/// File names written for one predicted image.
pub fn prediction_files(stem: &str) -> Vec<String> {
    let mut v: Vec<String> = Lesion::ALL.iter().map(|l| format!("{stem}_{}.png", l.code())).collect();
    v.push(format!("{stem}_overlay.png"));
    v
}

fn predict_files(ckpt: &Path, out: &Path, threshold: f32, images: &[PathBuf], args: Vec<String>) -> Result<i32> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config("threshold must be in [0, 1]".into()));
    }
    let ck = Checkpoint::load(ckpt)?;
    let model = ck.build_model()?;
    let dir = RunDir::create(out)?;
    let mut cfg = ExperimentConfig {
        input_size: ck.header.variant.input_size,
        variant: ck.header.variant.clone(),
        preprocess: ck.header.preprocess.clone(),
        seed: ck.header.seed,
        ..ExperimentConfig::default()
    };
    cfg.eval.threshold = threshold;
    dir.persist_config(&cfg.normalized(), "predict", args)?;

    let mut failed = 0;
    let mut scores = String::new();
    for path in images {
        match predict_one(&model, &ck, path, dir.path(), threshold) {
            Ok((stem, npdr)) => {
                println!("{}: wrote {}", path.display(), prediction_files(&stem).join(", "));
                if let Some(p) = npdr {
                    let line = format!("{stem}\tNoDR={:.6}\tNPDR={p:.6}", 1.0 - p);
                    println!("{line}");
                    let _ = writeln!(scores, "{line}");
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: {}: {e}", path.display());
            }
        }
    }
    if !scores.is_empty() {
        dir.write_text("scores.tsv", &scores)?;
    }
    println!("{} of {} images processed", images.len() - failed, images.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn predict_one(
    model: &crate::model::Lanet,
    ck: &Checkpoint,
    path: &Path,
    out: &Path,
    threshold: f32,
) -> Result<(String, Option<f64>)> {
    let raw = load_rgb(path)?;
    let (image, _) = preprocess(&raw, None, &ck.header.preprocess)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let sample = FundusSample::new(stem.clone(), image, None, None, Split::Test)?;
    let (maps, npdr) = predict(model, &[&sample])?;
    let probs = maps.index_axis(Axis(0), 0).to_owned();
    let names = prediction_files(&stem);
    for (l, name) in Lesion::ALL.iter().zip(&names) {
        save_gray(&out.join(name), &probs.index_axis(Axis(0), l.channel()).to_owned())?;
    }
    save_rgb(&out.join(&names[4]), &overlay(&sample.image, &probs, threshold))?;
    Ok((stem, npdr.map(|v| v[0])))
}

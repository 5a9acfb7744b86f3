use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lanet::data::synth::{synth_fundus, write_idrid_seg, SynthConfig};

fn lanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn desk_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/desk.toml")
        .display()
        .to_string()
}

const TINY: [&str; 10] = [
    "--set",
    "input_size=32",
    "--set",
    "max_steps=2",
    "--set",
    "batch_size=2",
    "--set",
    "dataset.synthetic.counts=[4, 2, 2]",
    "--set",
    "screening.epochs=1",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let cfg = desk_config();
    let out = out.display().to_string();
    let mut args = vec!["train-seg", "--config", &cfg, "--out", &out];
    args.extend(TINY);
    args.extend(extra);
    lanet(&args)
}

#[test]
fn usage_errors_exit_2() {
    let o = lanet(&["eval"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--ckpt"), "{}", stderr(&o));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(lanet(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(lanet(&["train-seg", "--bogus"]).status.code(), Some(2));
    assert_eq!(lanet(&[]).status.code(), Some(2));
}

#[test]
fn help_documents_every_flag() {
    let o = lanet(&["train-seg", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for flag in ["--config", "--set", "--out", "--dataset", "--root"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    let text = stdout(&lanet(&["eval", "--help"]));
    assert!(text.contains("--ckpt") && text.contains("--split"));
    let text = stdout(&lanet(&["--help"]));
    for cmd in ["prepare", "train-seg", "train-scr", "eval", "ablate", "sweep-alpha", "predict"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn prepare_prints_counts_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("idrid");
    write_idrid_seg(&root, 54, 27, &SynthConfig::new(16), 9).unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for m in [&a, &b] {
        let o = lanet(&[
            "prepare",
            "--root",
            root.to_str().unwrap(),
            "--dataset",
            "IDRiD-Seg",
            "--out",
            m.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let text = stdout(&o);
        let nums: Vec<&str> = text
            .lines()
            .filter_map(|l| l.split_whitespace().nth(1))
            .filter(|w| w.parse::<u32>().is_ok())
            .collect();
        assert_eq!(nums, ["40", "14", "27"], "{text}");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn prepare_on_missing_root_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let o = lanet(&[
        "prepare",
        "--root",
        dir.path().join("absent").to_str().unwrap(),
        "--dataset",
        "DDR-Seg",
        "--out",
        m.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error"));
    assert!(!m.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn config_is_persisted_before_any_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let missing = dir.path().join("no-such-dataset");
    let o = train(
        &out,
        &["--dataset", "DDR-Seg", "--root", missing.to_str().unwrap(), "--set", "seed=41"],
    );
    assert_eq!(o.status.code(), Some(1));
    let cfg = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(cfg.contains("DDR-Seg") && cfg.contains("seed = 41"), "{cfg}");
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 41);
    assert_eq!(run["command"], "train-seg");
    assert!(run["version"].is_string());
}

fn step_lines(run: &Path) -> Vec<String> {
    fs::read_to_string(run.join("log.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"step\"") && l.contains("\"batch\""))
        .map(String::from)
        .collect()
}

fn save_png(path: &Path, seed: u64) {
    let (img, _) = synth_fundus(&SynthConfig::new(48), seed);
    lanet::data::io::save_rgb(path, &img).unwrap();
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("seg");
    let o = train(&run, &["--set", "seg_loss.alpha=5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cfg = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(cfg.contains("alpha = 5.0"));
    assert!(run.join("report.json").is_file() && run.join("report.txt").is_file());
    let ckpt = run.join("checkpoints/last.safetensors");
    assert!(ckpt.is_file() && run.join("checkpoints/best.safetensors").is_file());
    assert_eq!(step_lines(&run).len(), 2);

    // the run directory alone relaunches an identical run
    let again = dir.path().join("again");
    let o = lanet(&[
        "train-seg",
        "--config",
        run.join("config.toml").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(step_lines(&run), step_lines(&again));
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(again.join("checkpoints/last.safetensors")).unwrap());

    let eval_dir = dir.path().join("eval");
    let o = lanet(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--config",
        &desk_config(),
        "--set",
        "dataset.synthetic.counts=[4, 2, 2]",
        "--split",
        "valid",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("mAP"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["num_images"], 2);
    assert!(fs::read_to_string(eval_dir.join("config.toml")).unwrap().contains("input_size = 32"));

    // one image: four probability rasters and one overlay at the network resolution
    let pred = dir.path().join("pred");
    let img = dir.path().join("fundus.png");
    save_png(&img, 1);
    let o = lanet(&["predict", "--ckpt", ckpt.to_str().unwrap(), "--out", pred.to_str().unwrap(), img.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pngs: Vec<PathBuf> = fs::read_dir(&pred)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    assert_eq!(pngs.len(), 5);
    for code in ["EX", "HE", "MA", "SE"] {
        assert!(pred.join(format!("fundus_{code}.png")).is_file());
    }
    let overlay = image::open(pred.join("fundus_overlay.png")).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (32, 32));
    assert!(!pred.join("scores.tsv").exists());

    // three inputs, one corrupt: two succeed, the exit code reports the failure
    let batch = dir.path().join("batch");
    let (a, b, bad) = (dir.path().join("a.png"), dir.path().join("b.png"), dir.path().join("bad.png"));
    save_png(&a, 2);
    save_png(&b, 3);
    fs::write(&bad, b"not an image").unwrap();
    let o = lanet(&[
        "predict",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--out",
        batch.to_str().unwrap(),
        a.to_str().unwrap(),
        bad.to_str().unwrap(),
        b.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.png"));
    assert!(stdout(&o).contains("2 of 3 images processed"));
    assert!(batch.join("a_overlay.png").is_file() && batch.join("b_overlay.png").is_file());
    assert!(!batch.join("bad_overlay.png").exists());

    // screening fine-tuning from the segmentation checkpoint, then a score line per image
    let scr = dir.path().join("scr");
    let cfg = desk_config();
    let mut args = vec!["train-scr", "--config", &cfg, "--out", scr.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap()];
    args.extend(TINY);
    let o = lanet(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let scr_ckpt = scr.join("checkpoints/last.safetensors");
    let scores = dir.path().join("scores");
    let o = lanet(&["predict", "--ckpt", scr_ckpt.to_str().unwrap(), "--out", scores.to_str().unwrap(), img.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = fs::read_to_string(scores.join("scores.tsv")).unwrap();
    assert!(line.starts_with("fundus\tNoDR=") && line.contains("NPDR="), "{line}");
    assert!(scores.join("fundus_overlay.png").is_file());
}

#[test]
fn ablate_writes_four_runs_and_a_merged_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ablate");
    let cfg = desk_config();
    let mut args = vec!["ablate", "--config", &cfg, "--out", out.to_str().unwrap()];
    args.extend(TINY);
    let o = lanet(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("ablation.txt")).unwrap();
    for name in ["Base ", "Base+LAM ", "Base+FPM ", "Base+LAM+FPM "] {
        assert!(table.contains(name), "{table}");
    }
    for d in ["Base", "Base_LAM", "Base_FPM", "Base_LAM_FPM"] {
        assert!(out.join(d).join("config.toml").is_file());
        assert!(out.join(d).join("report.json").is_file());
    }
    assert!(table.contains("identical batches: true; identical evaluation stream: true"));
}

#[test]
fn sweep_alpha_uses_the_configured_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let cfg = desk_config();
    let mut args = vec!["sweep-alpha", "--config", &cfg, "--out", out.to_str().unwrap(), "--set", "sweep.alphas=[1.0, 15.0]"];
    args.extend(TINY);
    let o = lanet(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("alpha_sweep.json")).unwrap()).unwrap();
    let names: Vec<&str> = table["rows"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["alpha=1", "alpha=15"]);
}

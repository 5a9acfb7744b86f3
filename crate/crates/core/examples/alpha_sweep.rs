//! Sweeps the positive-pixel weight of the segmentation loss.
//!
//! `cargo run --release --example alpha_sweep -- [steps] [alpha ...]`

use lanet::training::{alpha_sweep, open_dataset, ExperimentConfig, Purpose};

fn main() -> lanet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().map_or(60, |s| s.parse().expect("steps"));
    let mut alphas: Vec<f64> = args.iter().skip(1).map(|a| a.parse().expect("alpha")).collect();
    if alphas.is_empty() {
        alphas = vec![1.0, 5.0, 10.0, 15.0];
    }
    let mut cfg = ExperimentConfig::desk(64);
    cfg.max_steps = Some(steps);
    let splits = open_dataset(&cfg, Purpose::Segmentation)?;
    print!("{}", alpha_sweep(&cfg, &alphas, &splits, None)?.to_table());
    Ok(())
}

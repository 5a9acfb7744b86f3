//! Trains the four module combinations on synthetic data and prints the Dice table.
//!
//! `cargo run --release --example ablation_matrix -- [steps]`

use lanet::training::{open_dataset, run_ablation, ExperimentConfig, Purpose};

fn main() -> lanet::Result<()> {
    let steps = std::env::args().nth(1).map_or(60, |s| s.parse().expect("steps"));
    let mut cfg = ExperimentConfig::desk(64);
    cfg.max_steps = Some(steps);
    let splits = open_dataset(&cfg, Purpose::Segmentation)?;
    let table = run_ablation(&cfg, &splits, None)?;
    print!("{}", table.to_table());
    Ok(())
}

//! Overfits four synthetic 64×64 images and reports how fast EX Dice climbs.
//!
//! `cargo run --release --example overfit_synthetic -- [resnet50|resnet-small] [sgd|adamw] [lr]`

use std::time::Instant;

use lanet::data::augment::AugmentConfig;
use lanet::data::synth::{synth_samples, SynthConfig};
use lanet::data::Split;
use lanet::optim::{OptimizerConfig, Schedule};
use lanet::training::{overfit, ExperimentConfig};
use lanet::Lesion;

fn main() -> lanet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let backbone = args.first().map_or("resnet50", String::as_str);
    let opt = args.get(1).map_or("adamw", String::as_str);

    let mut cfg = ExperimentConfig::desk(64);
    cfg.variant.backbone = backbone.into();
    if backbone == "resnet50" {
        cfg.variant.decoder_channels = lanet::model::ModelVariant::full().decoder_channels;
    }
    cfg.augment = AugmentConfig::none();
    cfg.optimizer = match opt {
        "sgd" => OptimizerConfig::segmentation(),
        _ => OptimizerConfig {
            schedule: Schedule::Constant,
            ..OptimizerConfig::screening()
        },
    };
    if let Some(lr) = args.get(2) {
        cfg.optimizer.lr = lr.parse().expect("learning rate");
    }

    let samples = synth_samples(&SynthConfig::new(64), 4, Split::Train, 11);
    let t = Instant::now();
    let r = overfit(&cfg, &samples, Lesion::EX, 0.8, 200, 10)?;
    for (step, loss, dice) in &r.history {
        println!("step {step:>3}  loss {loss:>9.4}  EX Dice {dice:.4}");
    }
    match r.reached_at {
        Some(s) => println!("{backbone}/{opt}: EX Dice ≥ 0.8 after {s} steps in {:.1?}", t.elapsed()),
        None => println!("{backbone}/{opt}: EX Dice {:.4} after 200 steps in {:.1?}", r.final_dice, t.elapsed()),
    }
    Ok(())
}

//! Trains briefly, then writes probability maps and a colour overlay for a few images.
//! EX is yellow, HE red, MA green and SE cyan.
//!
//! `cargo run --release --example predict_overlay -- [out_dir] [steps]`

use std::path::PathBuf;

use lanet::data::io::{save_gray, save_rgb};
use lanet::data::synth::{synth_samples, SynthConfig};
use lanet::data::Split;
use lanet::training::{open_dataset, overlay, predict_maps, train_segmentation, ExperimentConfig, Purpose};
use lanet::Lesion;
use ndarray::Axis;

fn main() -> lanet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("overlay_out", String::as_str));
    let steps = args.get(1).map_or(100, |s| s.parse().expect("steps"));
    std::fs::create_dir_all(&out).map_err(|e| lanet::Error::io(&out, e))?;

    let mut cfg = ExperimentConfig::desk(64);
    cfg.max_steps = Some(steps);
    let seg = train_segmentation(&cfg, &open_dataset(&cfg, Purpose::Segmentation)?, None)?;

    let samples = synth_samples(&SynthConfig::new(64), 3, Split::Test, 99);
    let refs: Vec<_> = samples.iter().collect();
    let maps = predict_maps(&seg.model, &refs)?;
    for (i, s) in samples.iter().enumerate() {
        let probs = maps.index_axis(Axis(0), i).to_owned();
        for l in Lesion::ALL {
            let p = probs.index_axis(Axis(0), l.channel()).to_owned();
            save_gray(&out.join(format!("{}_{}.png", s.id, l.code())), &p)?;
        }
        save_rgb(&out.join(format!("{}_overlay.png", s.id)), &overlay(&s.image, &probs, cfg.eval.threshold))?;
    }
    println!("wrote maps and overlays for {} images to {}", samples.len(), out.display());
    Ok(())
}

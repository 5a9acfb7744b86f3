//! Crop, pad, equalize and resize a fundus photograph.
//!
//! `cargo run --example preprocess_fundus -- [image] [out_dir] [size]`
//!
//! Without an image (or with `-`) a synthetic fundus is used.

use std::path::PathBuf;

use lanet::data::io::{load_rgb, save_rgb};
use lanet::data::preprocess::{preprocess, retina_box, PreprocessConfig};
use lanet::data::synth::{synth_fundus, SynthConfig};

fn main() -> lanet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.get(1).map_or("preprocess_out", String::as_str));
    let size = args.get(2).map_or(256, |s| s.parse().expect("size"));
    std::fs::create_dir_all(&out).map_err(|e| lanet::Error::io(&out, e))?;

    let image = match args.first().filter(|p| !p.is_empty() && *p != "-") {
        Some(p) => load_rgb(p.as_ref())?,
        None => synth_fundus(&SynthConfig::new(320), 7).0,
    };
    let cfg = PreprocessConfig { input_size: size, ..PreprocessConfig::default() };
    let b = retina_box(&image, cfg.border_threshold)?;
    println!("input {:?}, retina box {b:?}", image.dim());

    let (enhanced, _) = preprocess(&image, None, &cfg)?;
    let (plain, _) = preprocess(&image, None, &PreprocessConfig { enhance: false, ..cfg.clone() })?;
    save_rgb(&out.join("original.png"), &image)?;
    save_rgb(&out.join("resized.png"), &plain)?;
    save_rgb(&out.join("enhanced.png"), &enhanced)?;
    println!("wrote original.png, resized.png and enhanced.png to {}", out.display());
    Ok(())
}

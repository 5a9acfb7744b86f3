//! Prints encoder, decoder and head shapes for each ablation variant.
//!
//! `cargo run --release --example model_shapes -- [resnet50|resnet-small] [size]`

use candle_core::{DType, Device, Tensor};
use lanet::model::{Lanet, ModelInit, ModelVariant};

fn main() -> lanet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let backbone = args.first().map_or("resnet-small", String::as_str);
    let size: usize = args.get(1).map_or(128, |s| s.parse().expect("size"));
    let base = match backbone {
        "resnet50" => ModelVariant { input_size: size, ..ModelVariant::full() },
        _ => ModelVariant::desk(size),
    };
    let x = Tensor::zeros((1, 3, size, size), DType::F32, &Device::Cpu)?;
    for v in base.ablation_matrix() {
        let m = Lanet::new(&v, &ModelInit::default())?;
        let out = m.forward_full(&x, false)?;
        println!("{} ({} parameters)", v.ablation_name(), m.num_parameters());
        for (i, e) in out.encoder.iter().enumerate() {
            println!("  encoder {i}  {:?}", e.dims());
        }
        for (i, (d, h)) in out.decoder.iter().zip(&out.lesions.per_stage).enumerate() {
            println!("  decoder {i}  {:?}  head {:?}", d.dims(), h.dims());
        }
        println!("  final      {:?}", out.lesions.final_map.dims());
    }
    Ok(())
}

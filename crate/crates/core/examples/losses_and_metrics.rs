//! Loss and metric values on small hand-made inputs.
//!
//! `cargo run --example losses_and_metrics`

use candle_core::{Device, Tensor};
use lanet::losses::{screening_ce, smooth_labels, weighted_bce, SegLossConfig, SmoothingConfig};
use lanet::metrics::{auc, average_precision, dice_single, map_score};

fn main() -> lanet::Result<()> {
    let dev = Device::Cpu;
    let pred = Tensor::new(&[0.9f64, 0.2, 0.7, 0.1, 0.4, 0.05], &dev)?;
    let gt = Tensor::new(&[1.0f64, 0.0, 1.0, 0.0, 1.0, 0.0], &dev)?;
    for alpha in [1.0, 5.0, 10.0] {
        let l = weighted_bce(&pred, &gt, &SegLossConfig::with_alpha(alpha))?;
        println!("weighted BCE, alpha={alpha:>4}: {:.5}", l.to_scalar::<f64>()?);
    }

    let cfg = SmoothingConfig { epsilon: 0.2, num_classes: 2 };
    let target = smooth_labels(1, &cfg)?;
    let logits = Tensor::new(&[[0.3f64, 1.2]], &dev)?;
    let t = Tensor::new(&[[target[0], target[1]]], &dev)?;
    println!("smoothed target {target:?}, CE {:.5}", screening_ce(&logits, &t)?.to_scalar::<f64>()?);

    let scores = [0.9f32, 0.8, 0.8, 0.6, 0.3, 0.1];
    let labels = [1u8, 0, 1, 1, 0, 0];
    println!("AP {:.4}", average_precision(&scores, &labels)?);
    let binary: Vec<u8> = scores.iter().map(|&s| (s >= 0.5) as u8).collect();
    println!("Dice at 0.5 {:.4}", dice_single(&binary, &labels)?);
    let s64: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
    println!("AUC {:.4}", auc(&s64, &labels)?);

    let m = map_score(&[Some(0.641), Some(0.476), Some(0.167), Some(0.713)])?;
    println!("mAP over EX, HE, MA, SE: {:.4}", m.value);
    Ok(())
}

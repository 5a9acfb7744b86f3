//! Segmentation pretraining → screening fine-tuning, against the same screening
//! model trained from scratch. Prints validation accuracy per epoch for both and
//! the epochs each needs to reach the target.
//!
//! `cargo run --release --example screening_transfer -- [seg_steps] [epochs] [target]`

use std::time::Instant;

use lanet::checkpoint::Checkpoint;
use lanet::training::{finetune_screening, open_dataset, train_segmentation, ExperimentConfig, Purpose};

fn main() -> lanet::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("number")).collect();
    let seg_steps = args.first().map_or(150, |&v| v as usize);
    let epochs = args.get(1).map_or(12, |&v| v as usize);
    let target = args.get(2).copied().unwrap_or(0.9);

    let mut seg_cfg = ExperimentConfig::desk(64);
    seg_cfg.max_steps = Some(seg_steps);
    let t = Instant::now();
    let seg = train_segmentation(&seg_cfg, &open_dataset(&seg_cfg, Purpose::Segmentation)?, None)?;
    println!("segmentation: {seg_steps} steps, final loss {:.4} ({:.1?})", seg.losses.last().unwrap(), t.elapsed());
    let ckpt = Checkpoint::from_model(&seg.model, &seg_cfg.preprocess, 0, seg_steps, None, None)?;

    let mut scr_cfg = seg_cfg.clone();
    scr_cfg.batch_size = 8;
    scr_cfg.screening.epochs = epochs;
    scr_cfg.dataset.synthetic.counts = [32, 24, 0];
    let splits = open_dataset(&scr_cfg, Purpose::Screening)?;

    let mut reached = Vec::new();
    for (name, init) in [("pretrained", Some(&ckpt)), ("scratch", None)] {
        let t = Instant::now();
        let out = finetune_screening(&scr_cfg, init, &splits, None)?;
        let acc: Vec<String> = out
            .history
            .iter()
            .map(|r| format!("{:.2}", r.val_accuracy.unwrap_or(f64::NAN)))
            .collect();
        println!("{name:>10}: accuracy by epoch [{}] ({:.1?})", acc.join(", "), t.elapsed());
        reached.push(out.epochs_to_accuracy(target));
    }
    let show = |r: Option<usize>| r.map_or("never".to_string(), |e| e.to_string());
    println!(
        "epochs to {target}: pretrained {}, scratch {}",
        show(reached[0]),
        show(reached[1])
    );
    Ok(())
}

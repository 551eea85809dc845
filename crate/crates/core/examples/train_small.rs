//! Trains a small UNet on synthetic faces under one loss mode, then scores
//! the best checkpoint through the inference path alone.
//!
//! `cargo run --example train_small [mode] [epochs]`
//! where mode is one of bce, dice, rmi, rmi+tiaug, rmi+tiaug+samcl.

use thermoseg::inference::evaluate;
use thermoseg::segnet::UNetConfig;
use thermoseg::training::{class_names, load_data, train_with_progress, DataSource, LossMode, SyntheticSource, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mode: LossMode = args.next().as_deref().unwrap_or("rmi+tiaug").parse()?;
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);

    let mut cfg = TrainConfig {
        loss_mode: mode,
        epochs,
        batch_size: 8,
        net: UNetConfig {
            depth: 3,
            base_channels: 8,
            ..UNetConfig::default()
        },
        data: DataSource::Synthetic(SyntheticSource {
            train_count: 64,
            val_count: 16,
            train_subjects: 8,
            val_subjects: 2,
            ..SyntheticSource::default()
        }),
        ..TrainConfig::default()
    };
    cfg.optimizer.lr = 2e-3;
    let data = load_data(&cfg.data)?;
    let out = train_with_progress(&cfg, &data, |r| {
        println!(
            "epoch {:>2}  loss {:.4}  val {:>6.2}  occluded {:>6.2}",
            r.epoch, r.train_loss, r.val.miou, r.occluded_val.miou
        );
    })?;

    let report = evaluate(&out.net, &data.val)?;
    println!("best epoch {}: mIoU {:.2}", out.best_epoch, report.miou);
    for (name, iou) in class_names(cfg.net.num_classes).iter().zip(&report.per_class_iou) {
        match iou {
            Some(v) => println!("  {name:<12} {:.3}", v),
            None => println!("  {name:<12} absent"),
        }
    }
    Ok(())
}

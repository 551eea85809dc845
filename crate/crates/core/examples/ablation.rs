//! Compares plain RMI, RMI with thermal augmentation, and the full
//! class-swap objective, on clean and occluded validation faces.
//!
//! `cargo run --release --example ablation`          reduced run, a few minutes
//! `cargo run --release --example ablation full`     the built-in benchmark, about half an hour

use std::time::Instant;

use thermoseg::training::{ablation, load_data, AblationConfig, DataSource, SyntheticSource};

fn main() -> thermoseg::Result<()> {
    let mut cfg = AblationConfig::benchmark();
    if std::env::args().nth(1).as_deref() != Some("full") {
        cfg.seeds = vec![0];
        cfg.train.epochs = 8;
        cfg.train.data = DataSource::Synthetic(SyntheticSource {
            train_count: 80,
            val_count: 20,
            train_subjects: 8,
            val_subjects: 2,
            ..SyntheticSource::default()
        });
    }
    let data = load_data(&cfg.train.data)?;
    let start = Instant::now();
    let last = cfg.train.epochs;
    let result = ablation(&cfg, &data, |mode, seed, r| {
        if r.epoch == last {
            eprintln!("{mode} seed {seed} finished at {:.0}s", start.elapsed().as_secs_f64());
        }
    })?;
    print!("{}", result.to_table());
    Ok(())
}

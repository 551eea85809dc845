//! Generates a synthetic thermal-face dataset on disk and summarizes the
//! class balance and the face/background temperature gap.
//!
//! `cargo run --example synth_dataset [out_dir] [count]`

use std::path::PathBuf;

use thermoseg::dataset::synth::{synth_dataset, write_dataset, NUM_CLASSES};
use thermoseg::dataset::SyntheticFaceConfig;
use thermoseg::tiaug::fg_bg_stats;
use thermoseg::training::class_names;

fn main() -> thermoseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_faces".into()));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let cfg = SyntheticFaceConfig::default();
    let samples = synth_dataset(&cfg, count, count.min(5))?;
    let index = write_dataset(&out, &samples)?;
    println!("{} samples, {} subjects -> {}", index.len(), index.subjects().len(), out.display());

    let mut pixels = vec![0usize; NUM_CLASSES];
    let mut gap = 0.0;
    for s in &samples {
        for &l in s.mask.labels() {
            pixels[l as usize] += 1;
        }
        let (fg, bg) = fg_bg_stats(&s.image, &s.mask)?;
        gap += fg - bg;
    }
    let total: usize = pixels.iter().sum();
    for (name, n) in class_names(NUM_CLASSES).iter().zip(&pixels) {
        println!("  {name:<12} {:>6.2}%", 100.0 * *n as f64 / total as f64);
    }
    println!("mean face - background: {:.2} °C", gap / samples.len() as f64);
    Ok(())
}

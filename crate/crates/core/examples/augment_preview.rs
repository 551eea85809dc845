//! Augments one synthetic face under several seeds and reports how far
//! each draw pushes the histogram outside the original face and
//! background modes. Previews go to `out_dir` as 16-bit PGMs.
//!
//! `cargo run --example augment_preview [out_dir] [draws]`

use std::path::PathBuf;

use thermoseg::dataset::formats::{encode_mask_pgm, encode_preview_pgm};
use thermoseg::dataset::synth::synth_dataset;
use thermoseg::dataset::SyntheticFaceConfig;
use thermoseg::rng;
use thermoseg::tiaug::{augment_stages, min_max_normalize, AugConfig, ModeIntervals};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "augment_preview".into()));
    let draws: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    std::fs::create_dir_all(&out)?;

    let face = synth_dataset(&SyntheticFaceConfig::default(), 1, 1)?.remove(0);
    let cfg = AugConfig::default();
    let write = |name: String, bytes: Vec<u8>| std::fs::write(out.join(name), bytes);
    let (h, w) = face.image.dims();
    let original = min_max_normalize(&face.image)?;
    write("original.pgm".into(), encode_preview_pgm(original.values(), h, w))?;

    println!("seed  objects  geometry                        outside modes    occluded px");
    for seed in 0..draws {
        let st = augment_stages(&face.image, &face.mask, &cfg, &mut rng::seeded(seed))?;
        let modes = ModeIntervals::measure(&st.geometric, &st.sample.mask, 0.0)?;
        let p = &st.sample.applied_params;
        let g = &p.geometry;
        println!(
            "{seed:>4}  {:>7}  rot {:>6.1}° resize {:.2} flips {}{}  {:>6.3} -> {:.3}  {:>11}",
            p.occluders.len(),
            g.rotation_deg,
            g.resize,
            if g.hflip { "h" } else { "-" },
            if g.vflip { "v" } else { "-" },
            modes.mass_outside(&st.geometric),
            modes.mass_outside(&st.occluded),
            st.sample.occlusion_map.iter().filter(|&&o| o).count(),
        );
        write(format!("aug_{seed}.pgm"), encode_preview_pgm(st.sample.image.values(), st.sample.image.height(), st.sample.image.width()))?;
        write(format!("aug_{seed}_mask.pgm"), encode_mask_pgm(&st.sample.mask))?;
    }
    Ok(())
}

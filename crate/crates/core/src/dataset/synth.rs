//! Procedural thermal faces: a warm elliptical face on a cooler background
//! with elliptical eyes, eyebrows, nose, mouth and a jaw ("chin") region.
//!
//! Background pixels stay inside `background_range` and face pixels inside
//! `face_range`, so the histogram is bimodal with a gap of at least
//! `face_range.0 - background_range.1`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::landmarks::{BACKGROUND, CHIN, EYEBROWS, EYES, MOUTH, NOSE};
use super::{formats, Annotation, DatasetIndex, IndexEntry};
use crate::error::{Error, Result};
use crate::raster::{LabelMask, ThermalImage};
use crate::rng;

pub const NUM_CLASSES: usize = 6;

/// Temperature offset of each region relative to the face base, °C.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionOffsets {
    pub chin: f64,
    pub mouth: f64,
    pub nose: f64,
    pub eyes: f64,
    pub eyebrows: f64,
}

impl Default for RegionOffsets {
    fn default() -> Self {
        RegionOffsets {
            chin: 0.4,
            mouth: 0.8,
            nose: -1.2,
            eyes: 1.5,
            eyebrows: -0.7,
        }
    }
}

impl RegionOffsets {
    fn for_class(&self, class: u8) -> f64 {
        match class {
            CHIN => self.chin,
            MOUTH => self.mouth,
            NOSE => self.nose,
            EYES => self.eyes,
            EYEBROWS => self.eyebrows,
            _ => 0.0,
        }
    }

    fn all(&self) -> [f64; 5] {
        [self.chin, self.mouth, self.nose, self.eyes, self.eyebrows]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticFaceConfig {
    pub height: usize,
    pub width: usize,
    pub background_range: (f64, f64),
    pub face_range: (f64, f64),
    pub region_offsets: RegionOffsets,
    /// Per-frame displacement of facial features, in face-radius units.
    pub geometry_jitter: f64,
    /// Peak amplitude of smooth texture plus pixel noise, °C.
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticFaceConfig {
    fn default() -> Self {
        SyntheticFaceConfig {
            height: 64,
            width: 64,
            background_range: (20.0, 26.0),
            face_range: (31.0, 37.0),
            region_offsets: RegionOffsets::default(),
            geometry_jitter: 0.05,
            texture_amplitude: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticFaceConfig {
    pub fn validate(&self) -> Result<()> {
        let (b0, b1) = self.background_range;
        let (f0, f1) = self.face_range;
        if self.height < 16 || self.width < 16 {
            return Err(Error::config("/height", "synthetic images must be at least 16×16"));
        }
        if !(b0 < b1) || !(f0 < f1) {
            return Err(Error::config("/face_range", "temperature ranges must be non-empty"));
        }
        if !(f0 > b1) {
            return Err(Error::config(
                "/face_range",
                format!("face range {f0}..{f1} must lie strictly above background {b0}..{b1}"),
            ));
        }
        if !(self.texture_amplitude >= 0.0) || !(self.geometry_jitter >= 0.0) {
            return Err(Error::config("/texture_amplitude", "amplitudes must be nonnegative"));
        }
        let (lo, hi) = self.face_base_range();
        if lo > hi {
            return Err(Error::config(
                "/region_offsets",
                "face range is too narrow for the region offsets plus texture",
            ));
        }
        if 2.0 * self.texture_amplitude > b1 - b0 {
            return Err(Error::config("/texture_amplitude", "texture exceeds the background range"));
        }
        Ok(())
    }

    /// Range of the face base temperature that keeps every region in `face_range`.
    fn face_base_range(&self) -> (f64, f64) {
        let offsets = self.region_offsets.all();
        let neg = offsets.iter().copied().fold(0.0, f64::min);
        let pos = offsets.iter().copied().fold(0.0, f64::max);
        let t = self.texture_amplitude;
        (self.face_range.0 - neg + t, self.face_range.1 - pos - t)
    }
}

/// Geometry of one face in image-relative units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceLayout {
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub tilt: f64,
    /// (class, center u, center v, radius u, radius v) in face-local units.
    pub features: Vec<(u8, f64, f64, f64, f64)>,
    /// Local `v` above which the jaw region starts.
    pub jaw_line: f64,
}

impl FaceLayout {
    /// A subject's canonical face.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..=hi);
        let eye_dx = u(0.32, 0.40);
        let eye_v = u(-0.26, -0.18);
        let brow_v = eye_v - u(0.20, 0.26);
        FaceLayout {
            center: (0.5 + u(-0.04, 0.04), 0.52 + u(-0.04, 0.04)),
            radii: (u(0.27, 0.33), u(0.36, 0.42)),
            tilt: u(-0.12, 0.12),
            features: vec![
                (EYES, -eye_dx, eye_v, u(0.14, 0.18), u(0.08, 0.10)),
                (EYES, eye_dx, eye_v, u(0.14, 0.18), u(0.08, 0.10)),
                (EYEBROWS, -eye_dx, brow_v, u(0.19, 0.24), u(0.06, 0.075)),
                (EYEBROWS, eye_dx, brow_v, u(0.19, 0.24), u(0.06, 0.075)),
                (NOSE, 0.0, u(0.06, 0.14), u(0.11, 0.15), u(0.18, 0.24)),
                (MOUTH, 0.0, u(0.48, 0.56), u(0.26, 0.34), u(0.08, 0.12)),
            ],
            jaw_line: u(-0.12, -0.04),
        }
    }

    /// Per-frame variation: pose shift plus feature displacement of up to `jitter`.
    pub fn perturbed<R: Rng + ?Sized>(&self, jitter: f64, rng: &mut R) -> Self {
        let mut out = self.clone();
        if jitter == 0.0 {
            return out;
        }
        let mut u = |s: f64| rng.random_range(-s..=s);
        out.center.0 += 0.5 * jitter * u(1.0);
        out.center.1 += 0.5 * jitter * u(1.0);
        out.tilt += jitter * u(1.0);
        for f in &mut out.features {
            f.1 += jitter * u(1.0);
            f.2 += jitter * u(1.0);
        }
        out
    }

    /// Class label and face membership at an image-relative point.
    fn classify(&self, x: f64, y: f64, aspect: f64) -> (bool, u8) {
        let (dx, dy) = (x - self.center.0, (y - self.center.1) * aspect);
        let (s, c) = self.tilt.sin_cos();
        let (rx, ry) = (c * dx + s * dy, -s * dx + c * dy);
        let u = rx / self.radii.0;
        let v = ry / (self.radii.1 * aspect);
        if u * u + v * v > 1.0 {
            return (false, BACKGROUND);
        }
        // paint order chin < mouth < nose < eyebrows < eyes
        let mut label = if v > self.jaw_line { CHIN } else { BACKGROUND };
        for &class in &[MOUTH, NOSE, EYEBROWS, EYES] {
            let hit = self.features.iter().any(|&(fc, cu, cv, au, av)| {
                fc == class && ((u - cu) / au).powi(2) + ((v - cv) / av).powi(2) <= 1.0
            });
            if hit {
                label = class;
            }
        }
        (true, label)
    }
}

/// Smooth random field with `|value| <= 1`.
struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let waves = (0..4)
            .map(|_| {
                let theta = rng.random_range(0.0..2.0 * PI);
                let freq = rng.random_range(1.0..4.0) * 2.0 * PI;
                (theta.cos() * freq, theta.sin() * freq, rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..1.0))
            })
            .collect();
        Texture { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.3).sum();
        self.waves
            .iter()
            .map(|&(kx, ky, phase, amp)| amp * (kx * x + ky * y + phase).sin())
            .sum::<f64>()
            / total
    }
}

/// Renders one face with the given layout.
pub fn render_face<R: Rng + ?Sized>(
    cfg: &SyntheticFaceConfig,
    layout: &FaceLayout,
    rng: &mut R,
) -> Result<(ThermalImage, LabelMask)> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let t = cfg.texture_amplitude;
    let (b0, b1) = cfg.background_range;
    let background = rng.random_range(b0 + t..=b1 - t);
    let (f0, f1) = cfg.face_base_range();
    let face = rng.random_range(f0..=f1);
    let texture = Texture::sample(rng);
    let aspect = h as f64 / w as f64;

    let mut values = Vec::with_capacity(h * w);
    let mut labels = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let (x, y) = ((col as f64 + 0.5) / w as f64, (row as f64 + 0.5) / h as f64);
            let (in_face, label) = layout.classify(x, y, aspect);
            let grain = 0.7 * texture.at(x, y) + 0.3 * rng.random_range(-1.0..=1.0);
            let base = if in_face {
                face + cfg.region_offsets.for_class(label)
            } else {
                background
            };
            values.push(base + t * grain);
            labels.push(label);
        }
    }
    Ok((ThermalImage::new(h, w, values)?, LabelMask::new(h, w, labels)?))
}

/// A fresh random face (identity and per-frame jitter both drawn from `rng`).
pub fn synth_face<R: Rng + ?Sized>(
    cfg: &SyntheticFaceConfig,
    rng: &mut R,
) -> Result<(ThermalImage, LabelMask)> {
    let layout = FaceLayout::sample(rng).perturbed(cfg.geometry_jitter, rng);
    render_face(cfg, &layout, rng)
}

#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub image: ThermalImage,
    pub mask: LabelMask,
    pub subject_id: String,
}

pub fn subject_name(s: usize) -> String {
    format!("subject{s:03}")
}

/// `count` frames spread contiguously over `subjects` identities. Each frame
/// has its own derived seed, so any subset can be regenerated independently.
pub fn synth_dataset(
    cfg: &SyntheticFaceConfig,
    count: usize,
    subjects: usize,
) -> Result<Vec<SyntheticSample>> {
    if subjects == 0 || subjects > count.max(1) {
        return Err(Error::config(
            "/subjects",
            format!("cannot spread {count} samples over {subjects} subjects"),
        ));
    }
    cfg.validate()?;
    let identities: Vec<FaceLayout> = (0..subjects)
        .map(|s| FaceLayout::sample(&mut rng::substream(cfg.seed, s as u64)))
        .collect();
    (0..count)
        .map(|i| {
            let s = i * subjects / count;
            let mut frame_rng = rng::substream(cfg.seed, (1 << 32) + i as u64);
            let layout = identities[s].perturbed(cfg.geometry_jitter, &mut frame_rng);
            let (image, mask) = render_face(cfg, &layout, &mut frame_rng)?;
            Ok(SyntheticSample {
                image,
                mask,
                subject_id: subject_name(s),
            })
        })
        .collect()
}

/// Writes `sample_NNNN.thrm`, `sample_NNNN_mask.pgm` and `index.json`.
pub fn write_dataset(dir: &Path, samples: &[SyntheticSample]) -> Result<DatasetIndex> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image = format!("sample_{i:04}.thrm");
        let mask = format!("sample_{i:04}_mask.pgm");
        formats::save_thermal(&dir.join(&image), &s.image)?;
        formats::save_mask(&dir.join(&mask), &s.mask)?;
        entries.push(IndexEntry {
            image: image.into(),
            annotation: Annotation::Mask(mask.into()),
            subject_id: s.subject_id.clone(),
        });
    }
    let idx = DatasetIndex::new(dir, entries);
    idx.save(&dir.join("index.json"))?;
    Ok(idx)
}

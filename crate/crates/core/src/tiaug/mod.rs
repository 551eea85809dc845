//! Thermal augmentation: geometric transforms, hot and cold occluders,
//! sensor noise bounded by the camera's NETD, then min-max normalization.
//!
//! Every sampled quantity is recorded in [`AppliedParams`]; [`replay`]
//! rebuilds a sample bit-exactly from that record.

pub mod geometry;
pub mod occluders;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMask, ThermalImage};
use crate::rng;

pub use crate::raster::min_max_normalize;
pub use geometry::{apply_geometry, gaussian_blur, GeometryParams};
pub use occluders::{
    render_occluders, sample_occluders, OccluderParams, Regime, References, ShapeKind, ALL_SHAPES,
};

/// `lo + (hi - lo)·u`; a collapsed range returns `lo` but still draws.
pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Rotation is uniform in `[-max, max]` degrees.
    pub rotation_max_deg: f64,
    pub blur_prob: f64,
    pub blur_sigma_range: (f64, f64),
    pub resize_range: (f64, f64),
    /// Crop or pad resized output back to this size; `None` keeps the resized size.
    pub output_size: Option<(usize, usize)>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            rotation_max_deg: 30.0,
            blur_prob: 0.5,
            blur_sigma_range: (0.5, 1.5),
            resize_range: (0.5, 2.0),
            output_size: None,
        }
    }
}

impl GeometryConfig {
    /// Horizontal flips, ±10° rotation, 0.8-1.25x resize, the default blur;
    /// no vertical flips.
    pub fn mild() -> Self {
        GeometryConfig {
            vflip_prob: 0.0,
            rotation_max_deg: 10.0,
            resize_range: (0.8, 1.25),
            ..GeometryConfig::default()
        }
    }

    pub fn disabled() -> Self {
        GeometryConfig {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            rotation_max_deg: 0.0,
            blur_prob: 0.0,
            blur_sigma_range: (0.0, 0.0),
            resize_range: (1.0, 1.0),
            output_size: None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, h: usize, w: usize, rng: &mut R) -> GeometryParams {
        let hflip = rng.random::<f64>() < self.hflip_prob;
        let vflip = rng.random::<f64>() < self.vflip_prob;
        let rotation_deg = uniform(rng, (-self.rotation_max_deg, self.rotation_max_deg));
        let resize = uniform(rng, self.resize_range);
        let blur = rng.random::<f64>() < self.blur_prob;
        let sigma = uniform(rng, self.blur_sigma_range);
        let output_size = self.output_size.unwrap_or_else(|| {
            (
                ((h as f64 * resize).round() as usize).max(1),
                ((w as f64 * resize).round() as usize).max(1),
            )
        });
        GeometryParams {
            hflip,
            vflip,
            rotation_deg,
            resize,
            blur_sigma: if blur { sigma } else { 0.0 },
            output_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugConfig {
    pub occluder_count_range: (usize, usize),
    pub size_range: (f64, f64),
    /// °C above the face mean.
    pub hot_offset_range: (f64, f64),
    /// °C below the background mean.
    pub cold_offset_range: (f64, f64),
    pub edge_softness_range: (f64, f64),
    pub hot_enabled: bool,
    pub cold_enabled: bool,
    pub shapes: Vec<ShapeKind>,
    pub noise_enabled: bool,
    /// Exclusive upper bound of the additive noise, °C.
    pub netd_max: f64,
    pub geometry: GeometryConfig,
    pub seed: u64,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            occluder_count_range: (0, 5),
            size_range: (0.05, 0.40),
            hot_offset_range: (2.0, 15.0),
            cold_offset_range: (2.0, 15.0),
            edge_softness_range: (0.0, 3.0),
            hot_enabled: true,
            cold_enabled: true,
            shapes: ALL_SHAPES.to_vec(),
            noise_enabled: true,
            netd_max: 0.1,
            geometry: GeometryConfig::default(),
            seed: 0,
        }
    }
}

impl AugConfig {
    /// No geometry, no occluders, no noise: only normalization remains.
    pub fn disabled() -> Self {
        AugConfig {
            occluder_count_range: (0, 0),
            noise_enabled: false,
            geometry: GeometryConfig::disabled(),
            ..AugConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |ptr: &str, (lo, hi): (f64, f64), min: f64| -> Result<()> {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min) {
                return Err(Error::config(ptr, format!("range ({lo}, {hi}) must be ordered and at least {min}")));
            }
            Ok(())
        };
        if self.occluder_count_range.0 > self.occluder_count_range.1 {
            return Err(Error::config("/occluder_count_range", "lower bound exceeds upper bound"));
        }
        range("/size_range", self.size_range, 0.0)?;
        if !(self.size_range.0 > 0.0 && self.size_range.1 <= 1.0) {
            return Err(Error::config("/size_range", "size fractions must lie in (0, 1]"));
        }
        range("/hot_offset_range", self.hot_offset_range, 0.0)?;
        range("/cold_offset_range", self.cold_offset_range, 0.0)?;
        if !(self.hot_offset_range.0 > 0.0) {
            return Err(Error::config("/hot_offset_range", "hot offsets must be strictly positive"));
        }
        if !(self.cold_offset_range.0 > 0.0) {
            return Err(Error::config("/cold_offset_range", "cold offsets must be strictly positive"));
        }
        range("/edge_softness_range", self.edge_softness_range, 0.0)?;
        if self.occluder_count_range.1 > 0 && !(self.hot_enabled || self.cold_enabled) {
            return Err(Error::config("/hot_enabled", "occluders requested with both regimes disabled"));
        }
        if self.shapes.is_empty() {
            return Err(Error::config("/shapes", "at least one shape kind is required"));
        }
        if !(self.netd_max > 0.0 && self.netd_max.is_finite()) {
            return Err(Error::config("/netd_max", format!("must be > 0, got {}", self.netd_max)));
        }
        let g = &self.geometry;
        for (ptr, p) in [
            ("/geometry/hflip_prob", g.hflip_prob),
            ("/geometry/vflip_prob", g.vflip_prob),
            ("/geometry/blur_prob", g.blur_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(ptr, format!("probability {p} is outside [0, 1]")));
            }
        }
        range("/geometry/rotation_max_deg", (0.0, g.rotation_max_deg), 0.0)?;
        range("/geometry/blur_sigma_range", g.blur_sigma_range, 0.0)?;
        range("/geometry/resize_range", g.resize_range, 0.5)?;
        if g.resize_range.1 > 2.0 {
            return Err(Error::config("/geometry/resize_range", "resize factors must lie within [0.5, 2.0]"));
        }
        if let Some((h, w)) = g.output_size {
            if h == 0 || w == 0 {
                return Err(Error::config("/geometry/output_size", "output size must be positive"));
            }
        }
        Ok(())
    }
}

/// Everything sampled for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedParams {
    pub geometry: GeometryParams,
    pub occluders: Vec<OccluderParams>,
    /// `None` when noise is disabled.
    pub noise_seed: Option<u64>,
    pub netd_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugSample {
    /// Normalized to [0, 1].
    pub image: ThermalImage,
    pub mask: LabelMask,
    pub occlusion_map: Vec<bool>,
    pub applied_params: AppliedParams,
}

/// Intermediate rasters in °C, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct AugStages {
    pub geometric: ThermalImage,
    pub occluded: ThermalImage,
    pub noisy: ThermalImage,
    pub sample: AugSample,
}

/// Adds i.i.d. noise uniform on `[0, netd_max)`. The bound holds for the
/// stored difference `out - in`, not only for the drawn value.
pub fn add_netd_noise<R: Rng + ?Sized>(img: &ThermalImage, netd_max: f64, rng: &mut R) -> Result<ThermalImage> {
    if !(netd_max > 0.0) {
        return Err(Error::contract("add_netd_noise", format!("netd_max must be > 0, got {netd_max}")));
    }
    let mut out = img.clone();
    for v in out.values_mut() {
        let base = *v;
        let mut noisy = base + rng.random::<f64>() * netd_max;
        while noisy - base >= netd_max {
            noisy = noisy.next_down();
        }
        *v = noisy;
    }
    Ok(out)
}

/// Mean over non-background pixels and over background pixels.
pub fn fg_bg_stats(img: &ThermalImage, mask: &LabelMask) -> Result<(f64, f64)> {
    if img.dims() != mask.dims() {
        return Err(Error::contract(
            "fg_bg_stats",
            format!("image {:?} and mask {:?} differ", img.dims(), mask.dims()),
        ));
    }
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &l) in img.values().iter().zip(mask.labels()) {
        if l == 0 {
            bg += v;
            nb += 1;
        } else {
            fg += v;
            nf += 1;
        }
    }
    if nf == 0 {
        return Err(Error::StatsUnavailable("mask has no facial pixels".into()));
    }
    if nb == 0 {
        return Err(Error::StatsUnavailable("mask has no background pixels".into()));
    }
    Ok((fg / nf as f64, bg / nb as f64))
}

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`; values
/// outside are clamped into the end bins.
pub fn histogram(values: &[f64], (lo, hi): (f64, f64), bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins.max(1)];
    let width = (hi - lo) / counts.len() as f64;
    for &v in values {
        let b = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
        let last = counts.len() - 1;
        counts[(b.max(0.0) as usize).min(last)] += 1;
    }
    counts
}

/// Value intervals spanned by background and facial pixels, widened by `margin`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeIntervals {
    pub background: (f64, f64),
    pub face: (f64, f64),
}

impl ModeIntervals {
    pub fn measure(img: &ThermalImage, mask: &LabelMask, margin: f64) -> Result<Self> {
        fg_bg_stats(img, mask)?;
        let span = |face: bool| {
            img.values()
                .iter()
                .zip(mask.labels())
                .filter(|(_, &l)| (l != 0) == face)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (&v, _)| (a.min(v), b.max(v)))
        };
        let ((b0, b1), (f0, f1)) = (span(false), span(true));
        Ok(ModeIntervals {
            background: (b0 - margin, b1 + margin),
            face: (f0 - margin, f1 + margin),
        })
    }

    /// Fraction of pixels outside both intervals.
    pub fn mass_outside(&self, img: &ThermalImage) -> f64 {
        let inside = |v: f64, (a, b): (f64, f64)| v >= a && v <= b;
        let n = img
            .values()
            .iter()
            .filter(|&&v| !inside(v, self.background) && !inside(v, self.face))
            .count();
        n as f64 / img.values().len() as f64
    }
}

/// Samples parameters for one augmentation.
pub fn sample_params<R: Rng + ?Sized>(
    img: &ThermalImage,
    cfg: &AugConfig,
    rng: &mut R,
) -> AppliedParams {
    let (h, w) = img.dims();
    let geometry = cfg.geometry.sample(h, w, rng);
    let (ho, wo) = geometry.output_size;
    let occluders = sample_occluders(ho, wo, cfg, rng);
    let noise_seed = rng.random::<u64>();
    AppliedParams {
        geometry,
        occluders,
        noise_seed: cfg.noise_enabled.then_some(noise_seed),
        netd_max: cfg.netd_max,
    }
}

/// Rebuilds every stage from a parameter record.
pub fn replay_stages(img: &ThermalImage, mask: &LabelMask, params: &AppliedParams) -> Result<AugStages> {
    if img.dims() != mask.dims() {
        return Err(Error::contract(
            "augment",
            format!("image {:?} and mask {:?} differ", img.dims(), mask.dims()),
        ));
    }
    let fill = geometry::fill_value(img, mask);
    let (geometric, mask) = apply_geometry(img, mask, &params.geometry, fill);
    let (occluded, occlusion_map) = render_occluders(&geometric, &mask, &params.occluders)?;
    let noisy = match params.noise_seed {
        Some(seed) => add_netd_noise(&occluded, params.netd_max, &mut rng::seeded(seed))?,
        None => occluded.clone(),
    };
    let image = min_max_normalize(&noisy)?;
    Ok(AugStages {
        geometric,
        occluded,
        noisy,
        sample: AugSample {
            image,
            mask,
            occlusion_map,
            applied_params: params.clone(),
        },
    })
}

pub fn replay(img: &ThermalImage, mask: &LabelMask, params: &AppliedParams) -> Result<AugSample> {
    replay_stages(img, mask, params).map(|s| s.sample)
}

/// Geometry, then occluders, then noise, then normalization.
pub fn augment<R: Rng + ?Sized>(
    img: &ThermalImage,
    mask: &LabelMask,
    cfg: &AugConfig,
    rng: &mut R,
) -> Result<AugSample> {
    replay(img, mask, &sample_params(img, cfg, rng))
}

/// Like [`augment`] but keeps the intermediate °C rasters.
pub fn augment_stages<R: Rng + ?Sized>(
    img: &ThermalImage,
    mask: &LabelMask,
    cfg: &AugConfig,
    rng: &mut R,
) -> Result<AugStages> {
    replay_stages(img, mask, &sample_params(img, cfg, rng))
}

/// Augments sample `i` with the sub-stream `mix(seed, i)`, on `workers`
/// threads. Output is independent of `workers`.
pub fn augment_batch(
    inputs: &[(ThermalImage, LabelMask)],
    cfg: &AugConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<AugSample>> {
    let run = || {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, (img, mask))| augment(img, mask, cfg, &mut rng::substream(seed, i as u64)))
            .collect::<Result<Vec<_>>>()
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?
        .install(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn face() -> (ThermalImage, LabelMask) {
        let cfg = crate::dataset::SyntheticFaceConfig::default();
        crate::dataset::synth_face(&cfg, &mut rng::seeded(5)).unwrap()
    }

    #[test]
    fn normalize_three_values() {
        let img = ThermalImage::new(1, 3, vec![20.0, 30.0, 40.0]).unwrap();
        assert_eq!(min_max_normalize(&img).unwrap().values(), &[0.0, 0.5, 1.0]);
        assert!(matches!(
            min_max_normalize(&ThermalImage::filled(2, 2, 3.0)),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn hot_pixel_halves_contrast() {
        // background 20, two face pixels at 30; one face pixel becomes 40
        let before = ThermalImage::new(1, 3, vec![20.0, 30.0, 30.0]).unwrap();
        let after = ThermalImage::new(1, 3, vec![20.0, 30.0, 40.0]).unwrap();
        let contrast = |img: &ThermalImage| {
            let n = min_max_normalize(img).unwrap();
            n.values()[1] - n.values()[0]
        };
        assert_eq!(contrast(&after), contrast(&before) / 2.0);
    }

    #[test]
    fn tiny_netd_is_nearly_identity() {
        let (img, _) = face();
        let out = add_netd_noise(&img, 1e-12, &mut rng::seeded(1)).unwrap();
        assert!(img.values().iter().zip(out.values()).all(|(a, b)| (b - a).abs() <= 1e-12));
        assert!(add_netd_noise(&img, 0.0, &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn noise_repeats_per_seed() {
        let (img, _) = face();
        let a = add_netd_noise(&img, 0.1, &mut rng::seeded(4)).unwrap();
        let b = add_netd_noise(&img, 0.1, &mut rng::seeded(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disabled_pipeline_only_normalizes() {
        let (img, mask) = face();
        let s = augment(&img, &mask, &AugConfig::disabled(), &mut rng::seeded(0)).unwrap();
        assert_eq!(s.image, min_max_normalize(&img).unwrap());
        assert_eq!(s.mask, mask);
        assert!(s.occlusion_map.iter().all(|&o| !o));
    }

    #[test]
    fn replay_is_bit_exact() {
        let (img, mask) = face();
        let cfg = AugConfig::default();
        let s = augment(&img, &mask, &cfg, &mut rng::seeded(11)).unwrap();
        let json = serde_json::to_string(&s.applied_params).unwrap();
        let params: AppliedParams = serde_json::from_str(&json).unwrap();
        assert_eq!(replay(&img, &mask, &params).unwrap(), s);
    }

    #[test]
    fn fg_bg_uniform_regions() {
        let mut mask = LabelMask::background(4, 4);
        mask.set(1, 1, 2);
        mask.set(1, 2, 3);
        let vals = mask.labels().iter().map(|&l| if l == 0 { 22.0 } else { 30.0 }).collect();
        let img = ThermalImage::new(4, 4, vals).unwrap();
        assert_eq!(fg_bg_stats(&img, &mask).unwrap(), (30.0, 22.0));
        let empty = LabelMask::background(4, 4);
        assert!(matches!(fg_bg_stats(&img, &empty), Err(Error::StatsUnavailable(_))));
    }

    #[test]
    fn histogram_clamps_ends() {
        assert_eq!(histogram(&[-1.0, 0.1, 0.6, 2.0], (0.0, 1.0), 2), vec![2, 2]);
    }

    #[test]
    fn config_pointers() {
        let mut cfg = AugConfig::default();
        cfg.netd_max = 0.0;
        match cfg.validate() {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/netd_max"),
            other => panic!("{other:?}"),
        }
        let mut cfg = AugConfig::default();
        cfg.geometry.resize_range = (0.25, 1.0);
        assert!(cfg.validate().is_err());
        AugConfig::default().validate().unwrap();
    }
}

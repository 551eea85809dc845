//! Synthetic hot and cold objects pasted over the image.
//!
//! An object's covered pixels (centers inside the shape, plus the pixel
//! holding its center) get weight 1; weight falls off linearly over
//! `edge_softness` pixels outside. Pixels are blended toward the object's
//! temperature by that weight.

use std::f64::consts::PI;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform, AugConfig};
use crate::error::Result;
use crate::raster::{LabelMask, ThermalImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    ConvexPolygon,
    /// Thick random-walk polyline.
    Strand,
}

pub const ALL_SHAPES: [ShapeKind; 4] = [
    ShapeKind::Ellipse,
    ShapeKind::Rectangle,
    ShapeKind::ConvexPolygon,
    ShapeKind::Strand,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Anchored above the face mean.
    Hot,
    /// Anchored below the background mean.
    Cold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccluderParams {
    pub shape_kind: ShapeKind,
    /// (x, y) in pixels.
    pub center: (f64, f64),
    /// Extent as a fraction of `min(H, W)`.
    pub size: f64,
    /// Minor/major ratio; for strands, thickness relative to the extent.
    pub aspect: f64,
    pub orientation: f64,
    pub regime: Regime,
    /// Signed °C relative to the regime's reference mean.
    pub temperature_offset: f64,
    pub edge_softness: f64,
    /// Polygon vertices or strand path in unit local coordinates.
    pub vertices: Vec<(f64, f64)>,
}

/// Face (non-background) and background means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub face_mean: f64,
    pub background_mean: f64,
}

impl OccluderParams {
    /// Core temperature given the pre-occlusion reference means.
    pub fn temperature(&self, refs: &References) -> f64 {
        match self.regime {
            Regime::Hot => refs.face_mean + self.temperature_offset,
            Regime::Cold => refs.background_mean + self.temperature_offset,
        }
    }

    fn contains(&self, x: f64, y: f64, min_side: f64) -> bool {
        let radius = self.size * min_side / 2.0;
        let (sin, cos) = self.orientation.sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let u = (dx * cos + dy * sin) / radius;
        let v = (-dx * sin + dy * cos) / radius;
        match self.shape_kind {
            ShapeKind::Ellipse => u * u + (v / self.aspect).powi(2) <= 1.0,
            ShapeKind::Rectangle => u.abs() <= 1.0 && v.abs() <= self.aspect,
            ShapeKind::ConvexPolygon => point_in_polygon(&self.vertices, u, v),
            ShapeKind::Strand => {
                // at least three quarters of a pixel wide
                let half = (self.aspect / 2.0).max(0.375 / radius);
                self.vertices
                    .windows(2)
                    .any(|s| segment_distance(s[0], s[1], (u, v)) <= half)
            }
        }
    }

    /// Per-pixel blend weight in [0, 1].
    pub fn alpha(&self, h: usize, w: usize) -> Vec<f64> {
        let min_side = h.min(w) as f64;
        let mut cover = vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                cover[r * w + c] = self.contains(c as f64 + 0.5, r as f64 + 0.5, min_side);
            }
        }
        let (cr, cc) = (self.center.1.floor(), self.center.0.floor());
        if cr >= 0.0 && cc >= 0.0 && (cr as usize) < h && (cc as usize) < w {
            cover[cr as usize * w + cc as usize] = true;
        }
        let reach = self.edge_softness.ceil() as isize;
        let mut alpha = vec![0.0; h * w];
        for r in 0..h as isize {
            for c in 0..w as isize {
                let i = (r * w as isize + c) as usize;
                if cover[i] {
                    alpha[i] = 1.0;
                    continue;
                }
                let mut d2 = f64::INFINITY;
                for rr in (r - reach).max(0)..=(r + reach).min(h as isize - 1) {
                    for cc in (c - reach).max(0)..=(c + reach).min(w as isize - 1) {
                        if cover[(rr * w as isize + cc) as usize] {
                            d2 = d2.min(((rr - r).pow(2) + (cc - c).pow(2)) as f64);
                        }
                    }
                }
                alpha[i] = (1.0 - d2.sqrt() / (self.edge_softness + 1.0)).max(0.0);
            }
        }
        alpha
    }
}

/// Even-odd test with the same crossing expression as the mask rasterizer.
fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

fn segment_distance(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    ((a.0 + t * vx - p.0).powi(2) + (a.1 + t * vy - p.1).powi(2)).sqrt()
}

/// Draws object parameters for an `h × w` frame. With both regimes enabled
/// and at least two objects, at least one is hot and one is cold.
pub fn sample_occluders<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    cfg: &AugConfig,
    rng: &mut R,
) -> Vec<OccluderParams> {
    let (k_lo, k_hi) = cfg.occluder_count_range;
    let k = rng.random_range(k_lo..=k_hi);
    let mut regimes: Vec<Regime> = (0..k)
        .map(|i| match (cfg.hot_enabled, cfg.cold_enabled) {
            (true, true) if i == 0 => Regime::Hot,
            (true, true) if i == 1 => Regime::Cold,
            (true, true) => {
                if rng.random_bool(0.5) {
                    Regime::Hot
                } else {
                    Regime::Cold
                }
            }
            (false, true) => Regime::Cold,
            _ => Regime::Hot,
        })
        .collect();
    regimes.shuffle(rng);
    regimes
        .into_iter()
        .map(|regime| {
            let shape_kind = *cfg.shapes.choose(rng).expect("validated non-empty");
            let center = (rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64);
            let size = uniform(rng, cfg.size_range);
            let orientation = rng.random::<f64>() * PI;
            let magnitude = uniform(
                rng,
                match regime {
                    Regime::Hot => cfg.hot_offset_range,
                    Regime::Cold => cfg.cold_offset_range,
                },
            );
            let temperature_offset = match regime {
                Regime::Hot => magnitude,
                Regime::Cold => -magnitude,
            };
            let edge_softness = uniform(rng, cfg.edge_softness_range);
            let (aspect, vertices) = match shape_kind {
                ShapeKind::Ellipse | ShapeKind::Rectangle => (uniform(rng, (0.4, 1.0)), Vec::new()),
                ShapeKind::ConvexPolygon => {
                    // points on an ellipse in angular order form a convex polygon
                    let aspect = uniform(rng, (0.5, 1.0));
                    let n = rng.random_range(3..=8);
                    let mut angles: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
                    angles.sort_by(f64::total_cmp);
                    (aspect, angles.iter().map(|a| (a.cos(), aspect * a.sin())).collect())
                }
                ShapeKind::Strand => {
                    let thickness = uniform(rng, (0.08, 0.25));
                    let steps = rng.random_range(4..=10);
                    let mut heading = rng.random::<f64>() * 2.0 * PI;
                    let mut p = (0.0, 0.0);
                    let mut path = vec![p];
                    for _ in 0..steps {
                        heading += uniform(rng, (-0.6, 0.6));
                        p = (p.0 + heading.cos() * 2.0 / steps as f64, p.1 + heading.sin() * 2.0 / steps as f64);
                        path.push(p);
                    }
                    // recentre so the path spans the extent around the center
                    let mx = path.iter().map(|q| q.0).sum::<f64>() / path.len() as f64;
                    let my = path.iter().map(|q| q.1).sum::<f64>() / path.len() as f64;
                    (thickness, path.into_iter().map(|q| (q.0 - mx, q.1 - my)).collect())
                }
            };
            OccluderParams {
                shape_kind,
                center,
                size,
                aspect,
                orientation,
                regime,
                temperature_offset,
                edge_softness,
                vertices,
            }
        })
        .collect()
}

/// Face and background means of `img` under `mask`.
pub fn references(img: &ThermalImage, mask: &LabelMask) -> Result<References> {
    let (face_mean, background_mean) = super::fg_bg_stats(img, mask)?;
    Ok(References {
        face_mean,
        background_mean,
    })
}

/// Paints `objects` in order. Returns the image and the map of pixels whose
/// weight under any object exceeds 0.5. Without objects the image is
/// returned untouched and no statistics are needed.
pub fn render_occluders(
    img: &ThermalImage,
    mask: &LabelMask,
    objects: &[OccluderParams],
) -> Result<(ThermalImage, Vec<bool>)> {
    let (h, w) = img.dims();
    let mut out = img.clone();
    let mut map = vec![false; h * w];
    if objects.is_empty() {
        return Ok((out, map));
    }
    let refs = references(img, mask)?;
    for obj in objects {
        let t = obj.temperature(&refs);
        for (i, a) in obj.alpha(h, w).into_iter().enumerate() {
            if a > 0.0 {
                let v = &mut out.values_mut()[i];
                *v = if a == 1.0 { t } else { (1.0 - a) * *v + a * t };
                map[i] |= a > 0.5;
            }
        }
    }
    Ok((out, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_region(h: usize, w: usize) -> (ThermalImage, LabelMask) {
        let mut mask = LabelMask::background(h, w);
        for r in h / 4..3 * h / 4 {
            for c in w / 4..3 * w / 4 {
                mask.set(r, c, 1);
            }
        }
        let vals = mask.labels().iter().map(|&l| if l == 0 { 22.0 } else { 34.0 }).collect();
        (ThermalImage::new(h, w, vals).unwrap(), mask)
    }

    #[test]
    fn hot_ellipse_core_sits_at_face_mean_plus_offset() {
        let (img, mask) = two_region(32, 32);
        let obj = OccluderParams {
            shape_kind: ShapeKind::Ellipse,
            center: (16.0, 16.0),
            size: 0.3,
            aspect: 1.0,
            orientation: 0.0,
            regime: Regime::Hot,
            temperature_offset: 10.0,
            edge_softness: 2.0,
            vertices: vec![],
        };
        let (out, map) = render_occluders(&img, &mask, &[obj]).unwrap();
        assert_eq!(out.get(16, 16), 44.0);
        assert!(map[16 * 32 + 16]);
        assert!(!map[0]);
        assert_eq!(out.get(0, 0), 22.0);
    }

    #[test]
    fn cold_needs_background() {
        let img = ThermalImage::filled(8, 8, 30.0);
        let mask = LabelMask::new(8, 8, vec![1; 64]).unwrap();
        let obj = OccluderParams {
            shape_kind: ShapeKind::Rectangle,
            center: (4.0, 4.0),
            size: 0.5,
            aspect: 1.0,
            orientation: 0.3,
            regime: Regime::Cold,
            temperature_offset: -5.0,
            edge_softness: 0.0,
            vertices: vec![],
        };
        assert!(matches!(
            render_occluders(&img, &mask, &[obj]),
            Err(crate::Error::StatsUnavailable(_))
        ));
    }

    #[test]
    fn sampled_regimes_are_mixed_and_offsets_signed() {
        let cfg = AugConfig {
            occluder_count_range: (2, 5),
            ..AugConfig::default()
        };
        let mut rng = crate::rng::seeded(3);
        for _ in 0..50 {
            let objs = sample_occluders(64, 64, &cfg, &mut rng);
            assert!(objs.iter().any(|o| o.regime == Regime::Hot));
            assert!(objs.iter().any(|o| o.regime == Regime::Cold));
            for o in &objs {
                match o.regime {
                    Regime::Hot => assert!(o.temperature_offset >= 2.0),
                    Regime::Cold => assert!(o.temperature_offset <= -2.0),
                }
                let a = o.alpha(64, 64);
                assert!(a.iter().any(|&v| v == 1.0), "{o:?}");
            }
        }
    }

    #[test]
    fn polygon_vertices_are_convex() {
        let cfg = AugConfig {
            shapes: vec![ShapeKind::ConvexPolygon],
            occluder_count_range: (3, 3),
            ..AugConfig::default()
        };
        let mut rng = crate::rng::seeded(9);
        for o in sample_occluders(32, 32, &cfg, &mut rng) {
            let v = &o.vertices;
            let n = v.len();
            let cross = |i: usize| {
                let (a, b, c) = (v[i], v[(i + 1) % n], v[(i + 2) % n]);
                (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0)
            };
            assert!((0..n).all(|i| cross(i) >= -1e-12));
        }
    }
}

//! 68-point facial landmarks to region masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelMask;

pub const LANDMARK_COUNT: usize = 68;

pub const BACKGROUND: u8 = 0;
pub const CHIN: u8 = 1;
pub const MOUTH: u8 = 2;
pub const NOSE: u8 = 3;
pub const EYES: u8 = 4;
pub const EYEBROWS: u8 = 5;
pub const CLASS_NAMES: [&str; 6] = ["background", "chin", "mouth", "nose", "eyes", "eyebrows"];

/// Landmark points in pixel coordinates; pixel `(row, col)` covers
/// `[col, col+1) × [row, row+1)` and is sampled at its center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<(f64, f64)>,
    pub subject_id: String,
    pub frame_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub class: u8,
    pub name: String,
    /// Closed boundaries as landmark indices; a class may own several (two eyes).
    pub boundaries: Vec<Vec<usize>>,
}

/// Regions in paint order: later regions overwrite earlier ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionDefinition {
    pub regions: Vec<Region>,
}

impl Default for RegionDefinition {
    /// Standard 68-point layout: jaw 0–16, brows 17–26, nose 27–35,
    /// eyes 36–47, outer lips 48–59. Paint order chin < mouth < nose <
    /// eyebrows < eyes.
    fn default() -> Self {
        let region = |class: u8, boundaries: Vec<Vec<usize>>| Region {
            class,
            name: CLASS_NAMES[class as usize].to_owned(),
            boundaries,
        };
        RegionDefinition {
            regions: vec![
                region(CHIN, vec![(0..=16).collect()]),
                region(MOUTH, vec![(48..=59).collect()]),
                region(NOSE, vec![vec![27, 31, 32, 33, 34, 35]]),
                region(EYEBROWS, vec![(17..=21).collect(), (22..=26).collect()]),
                region(EYES, vec![(36..=41).collect(), (42..=47).collect()]),
            ],
        }
    }
}

impl RegionDefinition {
    /// Number of classes including background.
    pub fn num_classes(&self) -> usize {
        self.regions.iter().map(|r| r.class as usize).max().unwrap_or(0) + 1
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        let mut seen = vec![false; c];
        seen[BACKGROUND as usize] = true;
        for r in &self.regions {
            if r.class == BACKGROUND {
                return Err(Error::contract("RegionDefinition", "class 0 is reserved for background"));
            }
            seen[r.class as usize] = true;
            for b in &r.boundaries {
                if b.len() < 3 {
                    return Err(Error::contract(
                        "RegionDefinition",
                        format!("region {} has a boundary with {} points", r.name, b.len()),
                    ));
                }
                if let Some(&i) = b.iter().find(|&&i| i >= LANDMARK_COUNT) {
                    return Err(Error::contract(
                        "RegionDefinition",
                        format!("region {} references landmark {i}", r.name),
                    ));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::contract(
                "RegionDefinition",
                format!("class indices are not dense: {missing} is unused"),
            ));
        }
        Ok(())
    }
}

/// Polygon x-crossings of the horizontal line `y`, unsorted.
fn crossings(poly: &[(f64, f64)], y: f64, out: &mut Vec<f64>) {
    out.clear();
    let n = poly.len();
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) {
            out.push((xj - xi) * (y - yi) / (yj - yi) + xi);
        }
    }
}

/// Even-odd scanline fill of a polygon, sampled at pixel centers.
pub fn fill_polygon(mask: &mut LabelMask, poly: &[(f64, f64)], class: u8) {
    let (h, w) = mask.dims();
    let ymin = poly.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = poly.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let r0 = (ymin - 0.5).floor().max(0.0) as usize;
    let r1 = ((ymax + 0.5).ceil().max(0.0) as usize).min(h);
    let mut xs = Vec::new();
    for row in r0..r1 {
        let yc = row as f64 + 0.5;
        crossings(poly, yc, &mut xs);
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let (a, b) = (pair[0], pair[1]);
            // first column with center >= a, then fill while center < b
            let mut col = ((a - 0.5).floor() - 1.0).max(0.0) as usize;
            while col < w && (col as f64 + 0.5) < a {
                col += 1;
            }
            while col < w && (col as f64 + 0.5) < b {
                mask.set(row, col, class);
                col += 1;
            }
        }
    }
}

/// True when every vertex lies on one line.
fn collinear(poly: &[(f64, f64)]) -> bool {
    let (x0, y0) = poly[0];
    let Some(&(x1, y1)) = poly.iter().find(|p| **p != poly[0]) else {
        return true;
    };
    poly.iter()
        .all(|&(x, y)| (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) == 0.0)
}

/// Rasterizes every region boundary into a class mask.
pub fn landmarks_to_mask(
    lm: &LandmarkSet,
    regions: &RegionDefinition,
    height: usize,
    width: usize,
) -> Result<LabelMask> {
    regions.validate()?;
    if let Some((i, p)) = lm.points.iter().enumerate().find(|(_, p)| {
        !(p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= width as f64 && p.1 <= height as f64)
    }) {
        return Err(Error::contract(
            "landmarks_to_mask",
            format!("landmark {i} at {p:?} is outside the {height}×{width} image"),
        ));
    }
    let mut mask = LabelMask::background(height, width);
    for region in &regions.regions {
        for boundary in &region.boundaries {
            let poly: Vec<(f64, f64)> = boundary
                .iter()
                .map(|&i| {
                    lm.points.get(i).copied().ok_or_else(|| {
                        Error::contract(
                            "landmarks_to_mask",
                            format!("region {} needs landmark {i}", region.name),
                        )
                    })
                })
                .collect::<Result<_>>()?;
            let mut distinct = poly.clone();
            distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            distinct.dedup();
            if distinct.len() < 3 || collinear(&poly) {
                return Err(Error::contract(
                    "landmarks_to_mask",
                    format!("region {} has a degenerate boundary", region.name),
                ));
            }
            fill_polygon(&mut mask, &poly, region.class);
        }
    }
    Ok(mask)
}

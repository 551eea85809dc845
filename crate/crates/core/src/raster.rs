//! Single-channel rasters: absolute-temperature thermal images and per-pixel
//! class masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plausible indoor range for raw radiometric values, °C.
pub const SANE_RANGE: (f64, f64) = (-40.0, 120.0);

/// Temperatures in °C, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalImage {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ThermalImage {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height * width != values.len() || height == 0 || width == 0 {
            return Err(Error::contract(
                "ThermalImage::new",
                format!("{height}×{width} image cannot hold {} values", values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(
                "ThermalImage::new",
                format!("non-finite value at pixel ({}, {})", i / width, i % width),
            ));
        }
        Ok(ThermalImage {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ThermalImage {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Like [`ThermalImage::new`] but also enforces [`SANE_RANGE`].
    pub fn checked(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let img = Self::new(height, width, values)?;
        let (lo, hi) = SANE_RANGE;
        if let Some(i) = img.values.iter().position(|&v| v <= lo || v >= hi) {
            return Err(Error::contract(
                "ThermalImage",
                format!(
                    "pixel ({}, {}) = {} °C is outside ({lo}, {hi})",
                    i / width,
                    i % width,
                    img.values[i]
                ),
            ));
        }
        Ok(img)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `(v - min) / (max - min)`.
pub fn min_max_normalize(img: &ThermalImage) -> Result<ThermalImage> {
    let (lo, hi) = (img.min(), img.max());
    if !(hi > lo) {
        return Err(Error::DegenerateRange(lo));
    }
    let span = hi - lo;
    let values = img.values().iter().map(|v| (v - lo) / span).collect();
    ThermalImage::new(img.height(), img.width(), values)
}

/// Class index per pixel, row-major. Class 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height * width != labels.len() {
            return Err(Error::contract(
                "LabelMask::new",
                format!("{height}×{width} mask cannot hold {} labels", labels.len()),
            ));
        }
        Ok(LabelMask {
            height,
            width,
            labels,
        })
    }

    pub fn background(height: usize, width: usize) -> Self {
        LabelMask {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        self.labels[row * self.width + col] = class;
    }

    /// Sorted distinct classes present.
    pub fn classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        self.labels.iter().for_each(|&l| seen[l as usize] = true);
        (0..=255u8).filter(|&c| seen[c as usize]).collect()
    }
}

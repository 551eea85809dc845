//! Flips, rotation, resize and blur. Image and mask share one inverse
//! mapping from output pixels to source coordinates.

use serde::{Deserialize, Serialize};

use crate::raster::{LabelMask, ThermalImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub hflip: bool,
    pub vflip: bool,
    pub rotation_deg: f64,
    pub resize: f64,
    /// Gaussian sigma in pixels; 0 disables blur.
    pub blur_sigma: f64,
    /// Final (height, width). Resized content is centered, then cropped or padded.
    pub output_size: (usize, usize),
}

impl GeometryParams {
    pub fn identity(h: usize, w: usize) -> Self {
        GeometryParams {
            hflip: false,
            vflip: false,
            rotation_deg: 0.0,
            resize: 1.0,
            blur_sigma: 0.0,
            output_size: (h, w),
        }
    }
}

/// Mean of background pixels, or the image minimum when there are none.
pub(crate) fn fill_value(img: &ThermalImage, mask: &LabelMask) -> f64 {
    let (sum, n) = img
        .values()
        .iter()
        .zip(mask.labels())
        .filter(|(_, &l)| l == 0)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    if n == 0 {
        img.min()
    } else {
        sum / n as f64
    }
}

/// Applies `p` to both rasters. Out-of-frame pixels take `fill` in the image
/// and background in the mask.
pub fn apply_geometry(
    img: &ThermalImage,
    mask: &LabelMask,
    p: &GeometryParams,
    fill: f64,
) -> (ThermalImage, LabelMask) {
    let (h, w) = img.dims();
    let (ho, wo) = p.output_size;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (oy, ox) = ((ho as f64 - 1.0) / 2.0, (wo as f64 - 1.0) / 2.0);
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    let mut values = Vec::with_capacity(ho * wo);
    let mut labels = Vec::with_capacity(ho * wo);
    for r in 0..ho {
        for c in 0..wo {
            let (dy, dx) = ((r as f64 - oy) / p.resize, (c as f64 - ox) / p.resize);
            let (mut y, mut x) = if p.rotation_deg == 0.0 {
                (dy + cy, dx + cx)
            } else {
                (cos * dy - sin * dx + cy, sin * dy + cos * dx + cx)
            };
            if p.hflip {
                x = w as f64 - 1.0 - x;
            }
            if p.vflip {
                y = h as f64 - 1.0 - y;
            }
            values.push(bilinear(img, y, x, fill));
            labels.push(nearest(mask, y, x));
        }
    }
    let mut out = ThermalImage::new(ho, wo, values).expect("finite resample");
    if p.blur_sigma > 0.0 {
        out = gaussian_blur(&out, p.blur_sigma);
    }
    (out, LabelMask::new(ho, wo, labels).expect("sized mask"))
}

fn bilinear(img: &ThermalImage, y: f64, x: f64, fill: f64) -> f64 {
    let (h, w) = img.dims();
    if !(y >= -0.5 && x >= -0.5 && y <= h as f64 - 0.5 && x <= w as f64 - 0.5) {
        return fill;
    }
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (r0, c0) = (y.floor() as usize, x.floor() as usize);
    let (fy, fx) = (y - r0 as f64, x - c0 as f64);
    let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
    let top = img.get(r0, c0) * (1.0 - fx) + img.get(r0, c1) * fx;
    let bottom = img.get(r1, c0) * (1.0 - fx) + img.get(r1, c1) * fx;
    if fy == 0.0 {
        top
    } else {
        top * (1.0 - fy) + bottom * fy
    }
}

fn nearest(mask: &LabelMask, y: f64, x: f64) -> u8 {
    let (h, w) = mask.dims();
    let (r, c) = ((y + 0.5).floor(), (x + 0.5).floor());
    if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
        0
    } else {
        mask.get(r as usize, c as usize)
    }
}

/// Separable Gaussian blur with edge replication, radius `ceil(3σ)`.
pub fn gaussian_blur(img: &ThermalImage, sigma: f64) -> ThermalImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = img.dims();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (k, &wt) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (rr, cc) = if horizontal {
                        (r, (c as isize + off).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((r as isize + off).clamp(0, h as isize - 1) as usize, c)
                    };
                    acc += wt * src[rr * w + cc];
                }
                dst[r * w + c] = acc;
            }
        }
        dst
    };
    let tmp = pass(img.values(), true);
    ThermalImage::new(h, w, pass(&tmp, false)).expect("blur keeps values finite")
}

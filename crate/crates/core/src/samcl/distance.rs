//! Distances between a prediction and a reference: region mutual
//! information on logits, and soft cross-entropy on feature maps.

use super::LossConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Keeps the top-left pixel of every `d×d` block.
pub fn nearest_downsample(t: &Tensor, d: usize) -> Result<Tensor> {
    let (n, c, h, w) = t.dims4("nearest_downsample")?;
    if d == 0 || h % d != 0 || w % d != 0 {
        return Err(Error::contract(
            "nearest_downsample",
            format!("{h}×{w} is not divisible by {d}"),
        ));
    }
    let (ho, wo) = (h / d, w / d);
    let src = t.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for r in 0..ho {
            for col in 0..wo {
                out.push(src[plane * h * w + r * d * w + col * d]);
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

/// `λ_ce·CE + λ_mi·MI` between softmaxed `logits` and a one-hot `target`.
///
/// CE is the mean per-pixel cross-entropy at full resolution. MI is, per
/// image and class, `½·logdet(Σ_{Y|P} + εI)` over every `k×k` neighborhood
/// of the downsampled maps, shifted by `−½·R·ln ε` so it is nonnegative,
/// and divided by `R·C·N`. Covariances are unnormalized sums over
/// neighborhoods.
pub fn rmi_distance(g: &Graph, logits: Var, target: &Tensor, cfg: &LossConfig) -> Result<Var> {
    let shape = g.shape(logits);
    if shape != target.shape() {
        return Err(Error::contract(
            "rmi_distance",
            format!("logits {:?} and target {:?} differ", shape, target.shape()),
        ));
    }
    let (n, c, h, w) = target.dims4("rmi_distance")?;
    let d = cfg.rmi_downsample;
    let k = cfg.rmi_neighborhood;
    if d == 0 || h % d != 0 || w % d != 0 || h / d < k || w / d < k {
        return Err(Error::contract(
            "rmi_distance",
            format!("{h}×{w} cannot be downsampled by {d} and still hold a {k}×{k} neighborhood"),
        ));
    }
    let r = k * k;
    let eps = cfg.rmi_epsilon;

    let y = g.constant(target.clone());
    let log_p = g.log_softmax_channels(logits)?;
    let ce = g.mul_scalar(g.sum(g.mul(y, log_p)?), -1.0 / (n * h * w) as f64);

    let p = g.softmax_channels(logits)?;
    let p = if d > 1 { g.avg_pool(p, d)? } else { p };
    let y = g.constant(nearest_downsample(target, d)?);
    let points = |x: Var| -> Result<Var> {
        let u = g.unfold(x, k)?;
        let l = g.shape(u)[3];
        g.center_last(g.reshape(u, &[n * c, r, l])?)
    };
    let (yu, pu) = (points(y)?, points(p)?);
    let s_yy = g.bmm(yu, yu, false, true)?;
    let s_yp = g.bmm(yu, pu, false, true)?;
    let s_pp = g.bmm(pu, pu, false, true)?;
    let inv = g.spd_inverse(g.add_scaled_identity(s_pp, eps)?)?;
    let explained = g.bmm(g.bmm(s_yp, inv, false, false)?, s_yp, false, true)?;
    let cond = g.add_scaled_identity(g.sub(s_yy, explained)?, eps)?;
    let logdet = g.sum(g.cholesky_logdet(cond)?);
    let floor = (n * c * r) as f64 * eps.ln();
    let mi = g.mul_scalar(g.add_scalar(logdet, -floor), 1.0 / (2 * r * c * n) as f64);

    g.add(g.mul_scalar(ce, cfg.lambda_ce), g.mul_scalar(mi, cfg.lambda_mi))
}

/// `−mean_pixels Σ_c softmax(reference)_c · log softmax(anchor)_c`.
/// Not symmetric; both arguments receive gradients.
pub fn ce_distance(g: &Graph, anchor: Var, reference: Var) -> Result<Var> {
    let (sa, sr) = (g.shape(anchor), g.shape(reference));
    if sa != sr || sa.len() != 4 {
        return Err(Error::contract(
            "ce_distance",
            format!("anchor {sa:?} and reference {sr:?} must be equal 4-D shapes"),
        ));
    }
    let q = g.softmax_channels(reference)?;
    let log_p = g.log_softmax_channels(anchor)?;
    let pixels = (sa[0] * sa[2] * sa[3]) as f64;
    Ok(g.mul_scalar(g.sum(g.mul(q, log_p)?), -1.0 / pixels))
}

//! Multi-scale class-swap triplet loss.
//!
//! The positive of a triplet is the one-hot ground truth; the negative is the
//! same mask with its class channels permuted by a derangement, so every
//! label is wrong while the spatial layout is intact. One triplet compares
//! softmaxed logits with an RMI distance; three more compare auxiliary-net
//! feature maps with a soft cross-entropy.

pub mod auxnet;
pub mod distance;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelMask;
use crate::tensor::{Graph, Tensor, Var};

pub use auxnet::AuxNet;
pub use distance::{ce_distance, rmi_distance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub margin: f64,
    /// Neighborhood side; `R = side²`.
    pub rmi_neighborhood: usize,
    pub rmi_downsample: usize,
    pub rmi_epsilon: f64,
    pub lambda_ce: f64,
    pub lambda_mi: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 1.0,
            rmi_neighborhood: 3,
            rmi_downsample: 2,
            rmi_epsilon: 5e-4,
            lambda_ce: 0.5,
            lambda_mi: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::config("/margin", format!("must be >= 0, got {}", self.margin)));
        }
        if self.rmi_neighborhood == 0 {
            return Err(Error::config("/rmi_neighborhood", "must be positive"));
        }
        if self.rmi_downsample == 0 {
            return Err(Error::config("/rmi_downsample", "must be positive"));
        }
        if !(self.rmi_epsilon > 0.0) {
            return Err(Error::config("/rmi_epsilon", format!("must be > 0, got {}", self.rmi_epsilon)));
        }
        if !(self.lambda_ce >= 0.0 && self.lambda_mi >= 0.0)
            || (self.lambda_ce + self.lambda_mi - 1.0).abs() > 1e-12
        {
            return Err(Error::config(
                "/lambda_ce",
                format!("weights must be nonnegative and sum to 1, got {} + {}", self.lambda_ce, self.lambda_mi),
            ));
        }
        Ok(())
    }
}

/// `[N, C, H, W]` indicator planes for a batch of masks.
pub fn one_hot(masks: &[&LabelMask], classes: usize) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::contract("one_hot", "empty batch"))?;
    let (h, w) = first.dims();
    let mut out = vec![0.0; masks.len() * classes * h * w];
    for (n, m) in masks.iter().enumerate() {
        if m.dims() != (h, w) {
            return Err(Error::contract(
                "one_hot",
                format!("mask {n} is {:?}, expected {:?}", m.dims(), (h, w)),
            ));
        }
        for (i, &l) in m.labels().iter().enumerate() {
            if l as usize >= classes {
                return Err(Error::contract(
                    "one_hot",
                    format!("label {l} at pixel ({}, {}) of mask {n} is not below {classes}", i / w, i % w),
                ));
            }
            out[(n * classes + l as usize) * h * w + i] = 1.0;
        }
    }
    Tensor::new(&[masks.len(), classes, h, w], out)
}

/// A one-hot batch with channels reordered: output channel `c` holds input
/// channel `permutation[c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwappedMask {
    pub tensor: Tensor,
    pub permutation: Vec<usize>,
}

/// Uniform random derangement of `0..c` by rejection.
pub fn derangement<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Result<Vec<usize>> {
    if c < 2 {
        return Err(Error::contract("class_swap", format!("need at least 2 classes, got {c}")));
    }
    let mut perm: Vec<usize> = (0..c).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

pub fn class_swap<R: Rng + ?Sized>(y: &Tensor, rng: &mut R) -> Result<SwappedMask> {
    let (n, c, h, w) = y.dims4("class_swap")?;
    let permutation = derangement(c, rng)?;
    let hw = h * w;
    let mut out = Vec::with_capacity(y.numel());
    for b in 0..n {
        for &src in &permutation {
            out.extend_from_slice(&y.data()[(b * c + src) * hw..(b * c + src + 1) * hw]);
        }
    }
    Ok(SwappedMask {
        tensor: Tensor::new(y.shape(), out)?,
        permutation,
    })
}

/// `max(d_ap − d_an + margin, 0)`.
pub fn hinge(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Graph form of [`hinge`].
pub fn triplet_term(g: &Graph, d_ap: Var, d_an: Var, margin: f64) -> Result<Var> {
    Ok(g.relu(g.add_scalar(g.sub(d_ap, d_an)?, margin)))
}

/// The four hinge terms and their sum.
#[derive(Clone, Copy, Debug)]
pub struct SamclTerms {
    pub total: Var,
    /// Logit scale, then the three auxiliary scales.
    pub terms: [Var; 4],
}

/// `aux_vars` must come from binding `aux.params()` on `g`.
pub fn samcl_loss(
    g: &Graph,
    logits: Var,
    y_pos: &Tensor,
    y_neg: &Tensor,
    aux: &AuxNet,
    aux_vars: &[Var],
    cfg: &LossConfig,
) -> Result<SamclTerms> {
    if y_pos.shape() != y_neg.shape() {
        return Err(Error::contract(
            "samcl_loss",
            format!("positive {:?} and negative {:?} differ", y_pos.shape(), y_neg.shape()),
        ));
    }
    let s0 = triplet_term(
        g,
        rmi_distance(g, logits, y_pos, cfg)?,
        rmi_distance(g, logits, y_neg, cfg)?,
        cfg.margin,
    )?;
    let anchor = g.softmax_channels(logits)?;
    let fa = aux.forward(g, aux_vars, anchor)?;
    let fp = aux.forward(g, aux_vars, g.constant(y_pos.clone()))?;
    let fn_ = aux.forward(g, aux_vars, g.constant(y_neg.clone()))?;
    let mut terms = [s0; 4];
    for i in 0..auxnet::AUX_LAYERS {
        terms[i + 1] = triplet_term(
            g,
            ce_distance(g, fa[i], fp[i])?,
            ce_distance(g, fa[i], fn_[i])?,
            cfg.margin,
        )?;
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(SamclTerms { total, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn stripes(h: usize, w: usize, c: usize) -> LabelMask {
        LabelMask::new(h, w, (0..h * w).map(|i| ((i % w) * c / w) as u8).collect()).unwrap()
    }

    #[test]
    fn one_hot_pixel() {
        let m = LabelMask::new(1, 1, vec![2]).unwrap();
        assert_eq!(one_hot(&[&m], 3).unwrap().data(), &[0.0, 0.0, 1.0]);
        let bad = LabelMask::new(1, 2, vec![0, 3]).unwrap();
        let err = one_hot(&[&bad], 3).unwrap_err().to_string();
        assert!(err.contains("(0, 1)"), "{err}");
    }

    #[test]
    fn one_hot_round_trips_through_argmax() {
        let mut r = rng::seeded(2);
        for _ in 0..20 {
            let m = LabelMask::new(5, 7, (0..35).map(|_| r.random_range(0..4u8)).collect()).unwrap();
            let t = one_hot(&[&m, &m], 4).unwrap();
            for b in 0..2 {
                let plane_sum: f64 = (0..4).map(|c| t.data()[(b * 4 + c) * 35 + 11]).sum();
                assert_eq!(plane_sum, 1.0);
            }
            assert_eq!(crate::segnet::argmax_channels(&t).unwrap()[1], m);
        }
    }

    #[test]
    fn two_classes_swap_uniquely() {
        let mut r = rng::seeded(0);
        for _ in 0..10 {
            assert_eq!(derangement(2, &mut r).unwrap(), vec![1, 0]);
        }
        assert!(derangement(1, &mut r).is_err());
    }

    #[test]
    fn swapped_channels_differ_and_stay_one_hot() {
        let m = stripes(4, 8, 4);
        let y = one_hot(&[&m], 4).unwrap();
        let s = class_swap(&y, &mut rng::seeded(5)).unwrap();
        for c in 0..4 {
            assert_ne!(&s.tensor.data()[c * 32..(c + 1) * 32], &y.data()[c * 32..(c + 1) * 32]);
            assert_eq!(&s.tensor.data()[c * 32..(c + 1) * 32], &y.data()[s.permutation[c] * 32..(s.permutation[c] + 1) * 32]);
        }
        for i in 0..32 {
            assert_eq!((0..4).map(|c| s.tensor.data()[c * 32 + i]).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn hinge_values() {
        assert_eq!(hinge(0.2, 1.5, 1.0), 0.0);
        assert_eq!(hinge(0.2, 0.3, 1.0), 0.9);
    }

    #[test]
    fn uniform_features_have_entropy_ln_c() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let d = ce_distance(&g, x, x).unwrap();
        assert!((g.item(d) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn aux_shapes() {
        let net = AuxNet::new(3, &mut rng::seeded(1));
        let g = Graph::new();
        let vars = net.params().bind(&g, true);
        let x = g.constant(Tensor::zeros(&[2, 3, 64, 64]));
        let taps = net.forward(&g, &vars, x).unwrap();
        assert_eq!(g.shape(taps[0]), vec![2, 3, 32, 32]);
        assert_eq!(g.shape(taps[1]), vec![2, 3, 16, 16]);
        assert_eq!(g.shape(taps[2]), vec![2, 3, 8, 8]);
        let odd = g.constant(Tensor::zeros(&[1, 3, 12, 12]));
        assert!(net.forward(&g, &vars, odd).is_err());
    }

    #[test]
    fn config_validation() {
        LossConfig::default().validate().unwrap();
        let cfg = LossConfig {
            lambda_ce: 0.7,
            ..LossConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }
}

//! Baseline segmentation losses.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

fn check_target(g: &Graph, logits: Var, target: &Tensor, op: &'static str) -> Result<usize> {
    let shape = g.shape(logits);
    if shape != target.shape() || shape.len() != 4 {
        return Err(Error::contract(
            op,
            format!("logits {shape:?} and target {:?} must be equal 4-D shapes", target.shape()),
        ));
    }
    Ok(shape[1])
}

/// Mean over pixels and channels of `w_c·(softplus(x) − x·t)`, which is
/// binary cross-entropy on `sigmoid(x)` written without a log of a
/// probability.
pub fn weighted_bce_loss(g: &Graph, logits: Var, target: &Tensor, class_weights: &[f64]) -> Result<Var> {
    let c = check_target(g, logits, target, "weighted_bce_loss")?;
    if class_weights.len() != c {
        return Err(Error::contract(
            "weighted_bce_loss",
            format!("{} class weights for {c} channels", class_weights.len()),
        ));
    }
    if let Some((i, w)) = class_weights.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::contract("weighted_bce_loss", format!("weight {i} is {w}, must be positive")));
    }
    let plane = target.shape()[2] * target.shape()[3];
    let weights = Tensor::from_fn(target.shape(), |i| class_weights[(i / plane) % c]);
    let t = g.constant(target.clone());
    let per_elem = g.sub(g.softplus(logits), g.mul(logits, t)?)?;
    Ok(g.mean(g.mul(per_elem, g.constant(weights))?))
}

/// `1 − mean_c (2·Σ p·t + s) / (Σ p + Σ t + s)` with `p` the channel
/// softmax and sums over batch and pixels. Smoothing `s` in both numerator
/// and denominator scores a class absent from both maps as a perfect match.
pub fn dice_loss(g: &Graph, logits: Var, target: &Tensor, smooth: f64) -> Result<Var> {
    let c = check_target(g, logits, target, "dice_loss")?;
    if !(smooth > 0.0) {
        return Err(Error::contract("dice_loss", format!("smoothing must be > 0, got {smooth}")));
    }
    let p = g.softmax_channels(logits)?;
    let t = g.constant(target.clone());
    let inter = g.sum_per_channel(g.mul(p, t)?)?;
    let sum_p = g.sum_per_channel(p)?;
    let sum_t = g.sum_per_channel(t)?;
    let num = g.add_scalar(g.mul_scalar(inter, 2.0), smooth);
    let den = g.add_scalar(g.add(sum_p, sum_t)?, smooth);
    let dice = g.mul_scalar(g.sum(g.div(num, den)?), 1.0 / c as f64);
    Ok(g.add_scalar(g.mul_scalar(dice, -1.0), 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two(labels: [usize; 4]) -> Tensor {
        Tensor::from_fn(&[1, 2, 2, 2], |i| (labels[i % 4] == i / 4) as u8 as f64)
    }

    #[test]
    fn dice_uniform_prediction_by_hand() {
        let g = Graph::new();
        let flat = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        // p = 1/2 everywhere. Balanced: each class I = 1, Σp = 2, Σt = 2 → 3/5.
        let d = dice_loss(&g, flat, &two_by_two([0, 0, 1, 1]), 1.0).unwrap();
        assert!((g.item(d) - 0.4).abs() < 1e-15);
        // 3:1 split: class 0 (3+1)/(5+1), class 1 (1+1)/(3+1); mean 7/12.
        let d = dice_loss(&g, flat, &two_by_two([0, 0, 0, 1]), 1.0).unwrap();
        assert!((g.item(d) - 5.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn dice_ignores_pixel_order() {
        let g = Graph::new();
        let x = Tensor::new(&[1, 2, 1, 4], vec![0.3, -1.0, 2.0, 0.5, 0.1, 0.4, -0.2, 1.5]).unwrap();
        let t = Tensor::new(&[1, 2, 1, 4], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let perm = [2, 0, 3, 1];
        let shuffle = |a: &Tensor| Tensor::from_fn(a.shape(), |i| a.data()[(i / 4) * 4 + perm[i % 4]]);
        let a = dice_loss(&g, g.constant(x.clone()), &t, 1.0).unwrap();
        let b = dice_loss(&g, g.constant(shuffle(&x)), &shuffle(&t), 1.0).unwrap();
        assert!((g.item(a) - g.item(b)).abs() < 1e-15);
    }

    #[test]
    fn saturated_predictions_cost_nothing() {
        let g = Graph::new();
        let t = two_by_two([0, 1, 1, 1]);
        let x = g.constant(Tensor::from_fn(t.shape(), |i| if t.data()[i] == 1.0 { 10.0 } else { -10.0 }));
        assert!(g.item(weighted_bce_loss(&g, x, &t, &[1.0, 3.0]).unwrap()) < 1e-3);
        assert!(g.item(dice_loss(&g, x, &t, 1.0).unwrap()) < 1e-3);
    }

    #[test]
    fn unit_weights_give_plain_bce() {
        let g = Graph::new();
        let t = two_by_two([1, 0, 0, 1]);
        let x = Tensor::from_fn(t.shape(), |i| i as f64 * 0.4 - 1.5);
        let plain: f64 = x
            .data()
            .iter()
            .zip(t.data())
            .map(|(&z, &y)| {
                let s = 1.0 / (1.0 + (-z).exp());
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / 8.0;
        let l = weighted_bce_loss(&g, g.constant(x), &t, &[1.0, 1.0]).unwrap();
        assert!((g.item(l) - plain).abs() < 1e-12);
    }

    #[test]
    fn bad_weights_rejected() {
        let g = Graph::new();
        let t = two_by_two([0, 0, 1, 1]);
        let x = g.constant(Tensor::zeros(t.shape()));
        assert!(weighted_bce_loss(&g, x, &t, &[1.0, 0.0]).is_err());
        assert!(weighted_bce_loss(&g, x, &t, &[1.0]).is_err());
    }
}

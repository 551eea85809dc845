use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// First/second-moment adaptive update with decoupled weight decay.
    Adamw,
    /// Plain gradient descent with the same decoupled weight decay.
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adamw,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-8,
        }
    }
}

/// Per-parameter optimizer state; slot `i` belongs to parameter `i`.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new<'a>(cfg: OptimizerConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.numel()]).collect();
        let second = first.clone();
        Optimizer {
            cfg,
            steps: 0,
            first,
            second,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::contract(
                "optimizer_step",
                format!(
                    "{} state slots, {} params, {} grads",
                    self.first.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first[i].len() != p.numel() {
                return Err(Error::contract(
                    "optimizer_step",
                    format!("param {i} has shape {:?} but grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.steps += 1;
        let c = &self.cfg;
        let t = self.steps as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - c.lr * c.weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                *w *= decay;
                match c.kind {
                    OptimizerKind::Sgd => *w -= c.lr * d,
                    OptimizerKind::Adamw => {
                        m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * d;
                        v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * d * d;
                        let m_hat = m[j] / bias1;
                        let v_hat = v[j] / bias2;
                        *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg, [&p]);
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p.data(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_on_unit_gradient() {
        // Hand evaluation: m̂ = 1, v̂ = 1, so w = 1·(1 − 0.1·1e-8) − 0.1·1/(1 + 1e-8).
        let mut p = Tensor::scalar(1.0);
        let cfg = OptimizerConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg, [&p]);
        opt.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        let expected = (1.0 - 0.1 * 1e-8) - 0.1 / (1.0 + 1e-8);
        assert!(p.item() < 1.0);
        assert!((p.item() - expected).abs() < 1e-15, "{} vs {expected}", p.item());
        assert!((p.item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut opt = Optimizer::new(OptimizerConfig::default(), [&p]);
        assert!(opt.step(&mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn sgd_fallback_is_plain_descent() {
        let mut p = Tensor::scalar(2.0);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.5,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg, [&p]);
        opt.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert_eq!(p.item(), 1.5);
    }
}

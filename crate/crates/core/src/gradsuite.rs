//! Finite-difference verification of every differentiable building block,
//! grouped by the layer it belongs to. Each op is checked on several
//! seeded random instances and reported by its worst relative error.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{self, SeededRng};
use crate::samcl::{self, class_swap, one_hot, AuxNet, LossConfig};
use crate::segnet::{UNet, UNetConfig};
use crate::tensor::gradcheck::{check_gradients, max_rel_err, DEFAULT_STEP};
use crate::tensor::{Graph, Tensor, Var};
use crate::training::losses::{dice_loss, weighted_bce_loss};
use crate::LabelMask;

pub const TOLERANCE: f64 = 1e-4;
/// Random instances per op.
pub const INSTANCES: u64 = 5;
/// Coordinates probed per input tensor.
const MAX_COORDS: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteModule {
    Tensor,
    Loss,
    Net,
}

impl SuiteModule {
    pub const ALL: [SuiteModule; 3] = [SuiteModule::Tensor, SuiteModule::Loss, SuiteModule::Net];

    pub fn name(self) -> &'static str {
        match self {
            SuiteModule::Tensor => "tensor",
            SuiteModule::Loss => "loss",
            SuiteModule::Net => "net",
        }
    }
}

impl fmt::Display for SuiteModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuiteModule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        SuiteModule::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown module {s:?}; expected tensor, loss or net"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub module: SuiteModule,
    pub op: &'static str,
    /// Worst over all instances.
    pub rel_err: f64,
    pub coords: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < TOLERANCE
    }
}

fn uniform(shape: &[usize], r: &mut SeededRng, scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-scale..scale))
}

fn labels(h: usize, w: usize, c: usize, r: &mut SeededRng) -> LabelMask {
    // blocks with every class present, plus a few random flips
    let mut l: Vec<u8> = (0..h * w).map(|i| ((((i / w) / 2) * 7 + ((i % w) / 3) * 3) % c) as u8).collect();
    for _ in 0..h {
        let i = r.random_range(0..h * w);
        l[i] = r.random_range(0..c as u8);
    }
    LabelMask::new(h, w, l).expect("dims match")
}

/// `Σ f(x)·R` for a fixed random `R`, so every output element matters.
fn project(g: &Graph, y: Var, r: &mut SeededRng) -> Result<Var> {
    let weights = uniform(&g.shape(y), r, 1.0);
    Ok(g.sum(g.mul(y, g.constant(weights))?))
}

type Case = Box<dyn Fn(&mut SeededRng) -> Result<(usize, f64)>>;

/// Runs `f` on `inputs`, checking all of them.
fn check<F>(f: F, inputs: &[Tensor], r: &mut SeededRng) -> Result<(usize, f64)>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let wrt: Vec<usize> = (0..inputs.len()).collect();
    let report = check_gradients(f, inputs, &wrt, DEFAULT_STEP, MAX_COORDS, r)?;
    Ok((report.iter().map(|c| c.coords).sum(), max_rel_err(&report)))
}

fn tensor_cases() -> Vec<(&'static str, Case)> {
    vec![
        (
            "conv2d",
            Box::new(|r| {
                let inputs = [uniform(&[2, 3, 6, 6], r, 1.0), uniform(&[4, 3, 3, 3], r, 0.5), uniform(&[4], r, 0.5)];
                let seed = r.random::<u64>();
                check(
                    move |g, v| project(g, g.conv2d(v[0], v[1], v[2], 1, 1)?, &mut rng::seeded(seed)),
                    &inputs,
                    r,
                )
            }),
        ),
        (
            "conv2d_stride2",
            Box::new(|r| {
                let inputs = [uniform(&[2, 3, 8, 8], r, 1.0), uniform(&[3, 3, 3, 3], r, 0.5), uniform(&[3], r, 0.5)];
                let seed = r.random::<u64>();
                check(
                    move |g, v| project(g, g.conv2d(v[0], v[1], v[2], 2, 1)?, &mut rng::seeded(seed)),
                    &inputs,
                    r,
                )
            }),
        ),
        (
            "softmax",
            Box::new(|r| {
                let inputs = [uniform(&[2, 4, 3, 3], r, 2.0)];
                let seed = r.random::<u64>();
                check(
                    move |g, v| project(g, g.softmax_channels(v[0])?, &mut rng::seeded(seed)),
                    &inputs,
                    r,
                )
            }),
        ),
        (
            "log_softmax",
            Box::new(|r| {
                let inputs = [uniform(&[2, 4, 3, 3], r, 2.0)];
                let seed = r.random::<u64>();
                check(
                    move |g, v| project(g, g.log_softmax_channels(v[0])?, &mut rng::seeded(seed)),
                    &inputs,
                    r,
                )
            }),
        ),
        (
            "max_pool2",
            Box::new(|r| {
                let inputs = [uniform(&[1, 2, 6, 6], r, 1.0)];
                let seed = r.random::<u64>();
                check(
                    move |g, v| project(g, g.max_pool2(v[0])?, &mut rng::seeded(seed)),
                    &inputs,
                    r,
                )
            }),
        ),
        (
            "upsample_concat",
            Box::new(|r| {
                let inputs = [uniform(&[1, 2, 3, 3], r, 1.0), uniform(&[1, 1, 6, 6], r, 1.0)];
                let seed = r.random::<u64>();
                check(
                    move |g, v| {
                        let up = g.upsample_nearest2(v[0])?;
                        project(g, g.concat_channels(up, v[1])?, &mut rng::seeded(seed))
                    },
                    &inputs,
                    r,
                )
            }),
        ),
        (
            "cholesky_logdet",
            Box::new(|r| {
                let inputs = [uniform(&[2, 4, 6], r, 1.0)];
                check(
                    |g, v| {
                        let s = g.add_scaled_identity(g.bmm(v[0], v[0], false, true)?, 0.5)?;
                        Ok(g.sum(g.cholesky_logdet(s)?))
                    },
                    &inputs,
                    r,
                )
            }),
        ),
        (
            "spd_inverse",
            Box::new(|r| {
                let inputs = [uniform(&[2, 3, 5], r, 1.0)];
                let seed = r.random::<u64>();
                check(
                    move |g, v| {
                        let s = g.add_scaled_identity(g.bmm(v[0], v[0], false, true)?, 0.5)?;
                        project(g, g.spd_inverse(s)?, &mut rng::seeded(seed))
                    },
                    &inputs,
                    r,
                )
            }),
        ),
    ]
}

fn loss_cases() -> Vec<(&'static str, Case)> {
    fn targets(r: &mut SeededRng, c: usize, hw: usize) -> Result<(Tensor, Tensor)> {
        let (m1, m2) = (labels(hw, hw, c, r), labels(hw, hw, c, r));
        let y = one_hot(&[&m1, &m2], c)?;
        let logits = uniform(y.shape(), r, 2.0);
        Ok((y, logits))
    }
    /// Aux weights shifted off zero so relu inputs stay away from the kink.
    fn aux(c: usize, r: &mut SeededRng) -> AuxNet {
        let mut net = AuxNet::new(c, r);
        for t in net.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v += r.random_range(-0.3..0.3);
            }
        }
        net
    }
    vec![
        (
            "weighted_bce",
            Box::new(|r| {
                let (y, logits) = targets(r, 4, 6)?;
                let w: Vec<f64> = (0..4).map(|_| r.random_range(0.5..2.0)).collect();
                check(move |g, v| weighted_bce_loss(g, v[0], &y, &w), &[logits], r)
            }),
        ),
        (
            "dice",
            Box::new(|r| {
                let (y, logits) = targets(r, 4, 6)?;
                check(move |g, v| dice_loss(g, v[0], &y, 1.0), &[logits], r)
            }),
        ),
        (
            "rmi_distance",
            Box::new(|r| {
                let (y, logits) = targets(r, 3, 8)?;
                let cfg = LossConfig::default();
                check(move |g, v| samcl::rmi_distance(g, v[0], &y, &cfg), &[logits], r)
            }),
        ),
        (
            "ce_distance",
            Box::new(|r| {
                let inputs = [uniform(&[2, 4, 4, 4], r, 2.0), uniform(&[2, 4, 4, 4], r, 2.0)];
                check(|g, v| samcl::ce_distance(g, v[0], v[1]), &inputs, r)
            }),
        ),
        (
            "samcl_loss_logits",
            Box::new(|r| {
                let m = labels(16, 16, 3, r);
                let y = one_hot(&[&m], 3)?;
                let neg = class_swap(&y, r)?.tensor;
                let net = aux(3, r);
                let logits = uniform(y.shape(), r, 1.5);
                let cfg = LossConfig::default();
                check(
                    move |g, v| {
                        let vars = net.params().bind(g, false);
                        Ok(samcl::samcl_loss(g, v[0], &y, &neg, &net, &vars, &cfg)?.total)
                    },
                    &[logits],
                    r,
                )
            }),
        ),
        (
            "samcl_loss_aux_weights",
            Box::new(|r| {
                let m = labels(16, 16, 3, r);
                let y = one_hot(&[&m], 3)?;
                let neg = class_swap(&y, r)?.tensor;
                let net = aux(3, r);
                let logits = uniform(y.shape(), r, 1.5);
                let cfg = LossConfig::default();
                let inputs: Vec<Tensor> = net.params().tensors().to_vec();
                check(
                    move |g, v| {
                        let l = g.constant(logits.clone());
                        Ok(samcl::samcl_loss(g, l, &y, &neg, &net, v, &cfg)?.total)
                    },
                    &inputs,
                    r,
                )
            }),
        ),
    ]
}

fn net_cases() -> Vec<(&'static str, Case)> {
    vec![(
        "unet_weights",
        Box::new(|r| {
            let cfg = UNetConfig {
                depth: 2,
                base_channels: 4,
                num_classes: 3,
                input_channels: 1,
            };
            let mut net = UNet::build(&cfg, r)?;
            // nonzero biases keep relu inputs off the kink
            for t in net.params_mut().tensors_mut() {
                for v in t.data_mut() {
                    *v += r.random_range(-0.1..0.1);
                }
            }
            let x = uniform(&[1, 1, 16, 16], r, 1.0);
            let seed = r.random::<u64>();
            // first, a middle and the last two layers' weights
            let picks = [0usize, 8, net.params().len() - 2, net.params().len() - 1];
            let inputs: Vec<Tensor> = picks.iter().map(|&i| net.params().tensors()[i].clone()).collect();
            check(
                move |g, v| {
                    let mut vars = net.params().bind(g, false);
                    for (&i, &var) in picks.iter().zip(v) {
                        vars[i] = var;
                    }
                    let out = net.forward(g, &vars, g.constant(x.clone()))?;
                    project(g, out, &mut rng::seeded(seed))
                },
                &inputs,
                r,
            )
        }),
    )]
}

/// Checks every op of `module` on [`INSTANCES`] random instances derived
/// from `seed`.
pub fn run(module: SuiteModule, seed: u64) -> Result<Vec<OpCheck>> {
    let cases = match module {
        SuiteModule::Tensor => tensor_cases(),
        SuiteModule::Loss => loss_cases(),
        SuiteModule::Net => net_cases(),
    };
    cases
        .into_iter()
        .enumerate()
        .map(|(k, (op, case))| {
            let (mut coords, mut worst) = (0, 0.0f64);
            for i in 0..INSTANCES {
                let mut r = rng::substream(rng::mix(seed, module as u64 * 1000 + k as u64), i);
                let (c, e) = case(&mut r)?;
                coords += c;
                worst = worst.max(e);
            }
            Ok(OpCheck {
                module,
                op,
                rel_err: worst,
                coords,
            })
        })
        .collect()
}

pub fn run_all(seed: u64) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    for m in SuiteModule::ALL {
        out.extend(run(m, seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_module_covers_the_triplet_pieces() {
        let ops: Vec<&str> = loss_cases().into_iter().map(|(n, _)| n).collect();
        for want in ["rmi_distance", "ce_distance", "samcl_loss_logits", "samcl_loss_aux_weights"] {
            assert!(ops.contains(&want), "{want}");
        }
    }

    #[test]
    fn module_names_parse() {
        for m in SuiteModule::ALL {
            assert_eq!(m.name().parse::<SuiteModule>().unwrap(), m);
        }
        assert!("optim".parse::<SuiteModule>().is_err());
    }

    #[test]
    fn tensor_suite_passes_and_repeats() {
        let a = run(SuiteModule::Tensor, 3).unwrap();
        assert!(a.iter().all(OpCheck::passed), "{a:?}");
        assert_eq!(a, run(SuiteModule::Tensor, 3).unwrap());
    }
}

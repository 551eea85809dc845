//! Central finite-difference checks of recorded gradients.
//!
//! The error reported for one input is normwise:
//! `max_i |analytic_i − numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)`
//! over the checked coordinates, which stays meaningful when individual
//! gradient entries are near zero.

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct InputCheck {
    pub input: usize,
    pub coords: usize,
    pub max_abs_err: f64,
    pub rel_err: f64,
}

fn eval<F>(f: &F, inputs: &[Tensor], wrt: &[usize]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if wrt.contains(&i) {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let out = f(&g, &vars)?;
    Ok((g, vars, out))
}

/// Compares `backward` against central differences of `f` for the inputs
/// listed in `wrt`, probing at most `max_coords` coordinates per input.
pub fn check_gradients<F, R>(
    f: F,
    inputs: &[Tensor],
    wrt: &[usize],
    step: f64,
    max_coords: usize,
    rng: &mut R,
) -> Result<Vec<InputCheck>>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let (g, vars, out) = eval(&f, inputs, wrt)?;
    g.backward(out)?;

    let mut report = Vec::with_capacity(wrt.len());
    for &i in wrt {
        let analytic = g
            .grad(vars[i])
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let numel = inputs[i].numel();
        let coords: Vec<usize> = if numel <= max_coords {
            (0..numel).collect()
        } else {
            let mut c = rand::seq::index::sample(rng, numel, max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut perturbed = inputs.to_vec();
        let (mut max_err, mut scale) = (0.0f64, 0.0f64);
        for &k in &coords {
            let orig = inputs[i].data()[k];
            perturbed[i].data_mut()[k] = orig + step;
            let (gp, _, op) = eval(&f, &perturbed, &[])?;
            perturbed[i].data_mut()[k] = orig - step;
            let (gm, _, om) = eval(&f, &perturbed, &[])?;
            perturbed[i].data_mut()[k] = orig;
            let numeric = (gp.item(op) - gm.item(om)) / (2.0 * step);
            let a = analytic.data()[k];
            max_err = max_err.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let rel_err = if scale > 0.0 { max_err / scale } else { 0.0 };
        report.push(InputCheck {
            input: i,
            coords: coords.len(),
            max_abs_err: max_err,
            rel_err,
        });
    }
    Ok(report)
}

/// Largest relative error over all checked inputs.
pub fn max_rel_err(report: &[InputCheck]) -> f64 {
    report.iter().map(|c| c.rel_err).fold(0.0, f64::max)
}

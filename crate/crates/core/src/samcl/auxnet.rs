//! Auxiliary network: three shared 3×3 stride-2 convolutions, C → C
//! channels, each followed by relu. Used only during training.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{xavier_conv, Graph, ParamSet, Tensor, Var};

pub const AUX_LAYERS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct AuxNet {
    classes: usize,
    params: ParamSet,
}

impl AuxNet {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(classes: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        for i in 0..AUX_LAYERS {
            params.push(format!("conv{i}.weight"), xavier_conv(classes, classes, 3, rng));
            params.push(format!("conv{i}.bias"), Tensor::zeros(&[classes]));
        }
        AuxNet { classes, params }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Feature maps after each layer: `H/2`, `H/4`, `H/8`. `vars` come from
    /// binding [`AuxNet::params`]; pass them to every forward call so the
    /// anchor, positive and negative passes share weights.
    pub fn forward(&self, g: &Graph, vars: &[Var], x: Var) -> Result<[Var; AUX_LAYERS]> {
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != self.classes {
            return Err(Error::contract(
                "aux_forward",
                format!("expected [N, {}, H, W], got {shape:?}", self.classes),
            ));
        }
        if shape[2] % 8 != 0 || shape[3] % 8 != 0 {
            return Err(Error::contract(
                "aux_forward",
                format!("{}×{} is not divisible by 8", shape[2], shape[3]),
            ));
        }
        let mut h = x;
        let mut taps = [x; AUX_LAYERS];
        for (i, tap) in taps.iter_mut().enumerate() {
            h = g.relu(g.conv2d(h, vars[2 * i], vars[2 * i + 1], 2, 1)?);
            *tap = h;
        }
        Ok(taps)
    }
}

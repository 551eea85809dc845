//! Named parameter tensors shared by the networks, optimizer and checkpoints.

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().collect()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor on `g`, tracked or not, in insertion order.
    pub fn bind(&self, g: &Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Gradients of bound vars; parameters the loss never reached get zeros.
    pub fn grads(&self, g: &Graph, vars: &[Var]) -> Vec<Tensor> {
        vars.iter()
            .zip(&self.tensors)
            .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    /// Entries prefixed with `prefix.` for a checkpoint.
    pub fn entries(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
            .collect()
    }

    /// Replaces every tensor from checkpoint entries named `prefix.<name>`;
    /// shapes must match.
    pub fn load_entries(&mut self, prefix: &str, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let key = format!("{prefix}.{name}");
            let found = entries
                .iter()
                .find(|(k, _)| *k == key)
                .ok_or_else(|| Error::contract("load_checkpoint", format!("missing tensor {key}")))?;
            if found.1.shape() != t.shape() {
                return Err(Error::contract(
                    "load_checkpoint",
                    format!("{key} has shape {:?}, expected {:?}", found.1.shape(), t.shape()),
                ));
            }
            *t = found.1.clone();
        }
        Ok(())
    }
}

/// Xavier-uniform conv weight `[c_out, c_in, k, k]`: `U(-a, a)` with
/// `a = sqrt(6 / ((c_in + c_out)·k²))`.
pub fn xavier_conv<R: Rng + ?Sized>(c_out: usize, c_in: usize, k: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / ((c_in + c_out) * k * k) as f64).sqrt();
    Tensor::from_fn(&[c_out, c_in, k, k], |_| rng.random_range(-a..a))
}

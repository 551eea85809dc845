use std::cell::RefCell;

use super::kernels::{self, ConvGeom};
use super::linalg;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Softplus(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumPerChannel(Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    SoftmaxChannels(Var),
    LogSoftmaxChannels(Var),
    Concat(Var, Var),
    UpsampleNearest2(Var),
    MaxPool2(Var, Vec<usize>),
    AvgPool(Var, usize),
    Unfold(Var, usize),
    CenterLast(Var),
    Bmm {
        a: Var,
        b: Var,
        dims: (usize, usize, usize, usize),
        trans: (bool, bool),
    },
    AddScaledIdentity(Var),
    SpdInverse(Var),
    /// Saves the inverses of the (symmetrized) input matrices.
    LogDet(Var, Vec<f64>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Concat(a, b) => vec![*a, *b],
            Bmm { a, b, .. } => vec![*a, *b],
            Conv2d {
                input,
                weight,
                bias,
                ..
            } => vec![*input, *weight, *bias],
            AddScalar(x) | MulScalar(x, _) | Relu(x) | Log(x) | Exp(x) | Softplus(x)
            | Sigmoid(x) | Clamp(x, _, _) | Sum(x) | Mean(x) | SumPerChannel(x) | Reshape(x)
            | SoftmaxChannels(x) | LogSoftmaxChannels(x) | UpsampleNearest2(x)
            | MaxPool2(x, _) | AvgPool(x, _) | Unfold(x, _) | CenterLast(x)
            | AddScaledIdentity(x) | SpdInverse(x) | LogDet(x, _) => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records a forward computation so it can be differentiated.
///
/// A graph is confined to one thread; its nodes are appended in forward order,
/// so node ids are already a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape().to_vec(),
            data: g.clone(),
        })
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|v| nodes[v.0].requires_grad)
        };
        self.push_raw(value, op, requires_grad)
    }

    fn with<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    fn map(&self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.with(x, |t| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        });
        self.push(value, op)
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            if ta.shape == tb.shape {
                Tensor {
                    shape: ta.shape.clone(),
                    data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
                }
            } else if tb.numel() == 1 {
                let y = tb.data[0];
                Tensor {
                    shape: ta.shape.clone(),
                    data: ta.data.iter().map(|&x| f(x, y)).collect(),
                }
            } else if ta.numel() == 1 {
                let x = ta.data[0];
                Tensor {
                    shape: tb.shape.clone(),
                    data: tb.data.iter().map(|&y| f(x, y)).collect(),
                }
            } else {
                return Err(Error::contract(
                    name,
                    format!("shapes {:?} and {:?} are not compatible", ta.shape, tb.shape),
                ));
            }
        };
        Ok(self.push(value, op))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", Op::Div(a, b), |x, y| x / y)
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        self.map(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn mul_scalar(&self, x: Var, c: f64) -> Var {
        self.map(x, Op::MulScalar(x, c), |v| v * c)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// `max{x, 0}`, the hinge of a triplet term.
    pub fn max_with_zero(&self, x: Var) -> Var {
        self.relu(x)
    }

    /// Natural log; inputs must be positive.
    pub fn log(&self, x: Var) -> Var {
        self.map(x, Op::Log(x), f64::ln)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.map(x, Op::Exp(x), f64::exp)
    }

    /// `ln(1 + eˣ)` evaluated without overflow.
    pub fn softplus(&self, x: Var) -> Var {
        self.map(x, Op::Softplus(x), softplus)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.with(x, |t| t.data.iter().sum::<f64>());
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&self, x: Var) -> Var {
        let s = self.with(x, |t| t.data.iter().sum::<f64>() / t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Sums an `[N, C, H, W]` tensor over everything but the channel axis.
    pub fn sum_per_channel(&self, x: Var) -> Result<Var> {
        let value = self.with(x, |t| -> Result<Tensor> {
            let (n, c, h, w) = t.dims4("sum_per_channel")?;
            let pix = h * w;
            let mut out = vec![0.0; c];
            for i in 0..n {
                for (ch, acc) in out.iter_mut().enumerate() {
                    let base = (i * c + ch) * pix;
                    *acc += t.data[base..base + pix].iter().sum::<f64>();
                }
            }
            Tensor::new(&[c], out)
        })?;
        Ok(self.push(value, Op::SumPerChannel(x)))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.with(x, |t| t.clone().reshape(shape))?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// 2-D cross-correlation (no kernel flip) with zero padding.
    pub fn conv2d(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (geom, value) = {
            let nodes = self.nodes.borrow();
            let (x, w, b) = (
                &nodes[input.0].value,
                &nodes[weight.0].value,
                &nodes[bias.0].value,
            );
            let (n, c_in, h, wd) = x.dims4("conv2d")?;
            let (c_out, wc_in, k, k2) = w.dims4("conv2d")?;
            if wc_in != c_in {
                return Err(Error::contract(
                    "conv2d",
                    format!("input has {c_in} channels but weight expects {wc_in}"),
                ));
            }
            if k != k2 || k % 2 == 0 {
                return Err(Error::contract(
                    "conv2d",
                    format!("kernel must be square with odd side, got {k}×{k2}"),
                ));
            }
            if b.shape() != [c_out] {
                return Err(Error::contract(
                    "conv2d",
                    format!("bias shape {:?} does not match {c_out} output channels", b.shape()),
                ));
            }
            if stride == 0 || h + 2 * padding < k || wd + 2 * padding < k {
                return Err(Error::contract(
                    "conv2d",
                    format!("{h}×{wd} input with padding {padding} is smaller than kernel {k}"),
                ));
            }
            let geom = ConvGeom {
                n,
                c_in,
                h,
                w: wd,
                c_out,
                k,
                stride,
                pad: padding,
                h_out: (h + 2 * padding - k) / stride + 1,
                w_out: (wd + 2 * padding - k) / stride + 1,
            };
            let out = kernels::conv2d_forward(&x.data, &w.data, &b.data, &geom);
            (
                geom,
                Tensor {
                    shape: vec![n, c_out, geom.h_out, geom.w_out],
                    data: out,
                },
            )
        };
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Softmax across channels at every pixel (max-subtracted).
    pub fn softmax_channels(&self, x: Var) -> Result<Var> {
        let value = self.with(x, |t| -> Result<Tensor> {
            let (n, c, h, w) = t.dims4("softmax_channels")?;
            Ok(Tensor {
                shape: t.shape.clone(),
                data: kernels::softmax_channels(&t.data, n, c, h * w),
            })
        })?;
        Ok(self.push(value, Op::SoftmaxChannels(x)))
    }

    pub fn log_softmax_channels(&self, x: Var) -> Result<Var> {
        let value = self.with(x, |t| -> Result<Tensor> {
            let (n, c, h, w) = t.dims4("log_softmax_channels")?;
            Ok(Tensor {
                shape: t.shape.clone(),
                data: kernels::log_softmax_channels(&t.data, n, c, h * w),
            })
        })?;
        Ok(self.push(value, Op::LogSoftmaxChannels(x)))
    }

    /// Concatenates two `[N, C, H, W]` tensors along the channel axis.
    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (n, ca, h, w) = ta.dims4("concat_channels")?;
            let (nb, cb, hb, wb) = tb.dims4("concat_channels")?;
            if (n, h, w) != (nb, hb, wb) {
                return Err(Error::contract(
                    "concat_channels",
                    format!("{:?} and {:?} differ outside the channel axis", ta.shape, tb.shape),
                ));
            }
            let pix = h * w;
            let mut data = Vec::with_capacity(n * (ca + cb) * pix);
            for i in 0..n {
                data.extend_from_slice(&ta.data[i * ca * pix..(i + 1) * ca * pix]);
                data.extend_from_slice(&tb.data[i * cb * pix..(i + 1) * cb * pix]);
            }
            Tensor {
                shape: vec![n, ca + cb, h, w],
                data,
            }
        };
        Ok(self.push(value, Op::Concat(a, b)))
    }

    pub fn upsample_nearest2(&self, x: Var) -> Result<Var> {
        let value = self.with(x, |t| -> Result<Tensor> {
            let (n, c, h, w) = t.dims4("upsample_nearest2")?;
            Ok(Tensor {
                shape: vec![n, c, 2 * h, 2 * w],
                data: kernels::upsample_nearest2(&t.data, n * c, h, w),
            })
        })?;
        Ok(self.push(value, Op::UpsampleNearest2(x)))
    }

    pub fn max_pool2(&self, x: Var) -> Result<Var> {
        let (value, arg) = self.with(x, |t| -> Result<(Tensor, Vec<usize>)> {
            let (n, c, h, w) = t.dims4("max_pool2")?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::contract("max_pool2", format!("{h}×{w} is not even")));
            }
            let (data, arg) = kernels::max_pool2(&t.data, n * c, h, w);
            Ok((
                Tensor {
                    shape: vec![n, c, h / 2, w / 2],
                    data,
                },
                arg,
            ))
        })?;
        Ok(self.push(value, Op::MaxPool2(x, arg)))
    }

    pub fn avg_pool(&self, x: Var, factor: usize) -> Result<Var> {
        let value = self.with(x, |t| -> Result<Tensor> {
            let (n, c, h, w) = t.dims4("avg_pool")?;
            if factor == 0 || h % factor != 0 || w % factor != 0 {
                return Err(Error::contract(
                    "avg_pool",
                    format!("{h}×{w} is not divisible by {factor}"),
                ));
            }
            Ok(Tensor {
                shape: vec![n, c, h / factor, w / factor],
                data: kernels::avg_pool(&t.data, n * c, h, w, factor),
            })
        })?;
        Ok(self.push(value, Op::AvgPool(x, factor)))
    }

    /// `[N, C, H, W]` → `[N, C, k·k, L]`: every valid `k×k` neighborhood as a column.
    pub fn unfold(&self, x: Var, k: usize) -> Result<Var> {
        let value = self.with(x, |t| -> Result<Tensor> {
            let (n, c, h, w) = t.dims4("unfold")?;
            if k == 0 || h < k || w < k {
                return Err(Error::contract(
                    "unfold",
                    format!("{h}×{w} plane is smaller than the {k}×{k} neighborhood"),
                ));
            }
            let l = (h + 1 - k) * (w + 1 - k);
            Ok(Tensor {
                shape: vec![n, c, k * k, l],
                data: kernels::unfold(&t.data, n * c, h, w, k),
            })
        })?;
        Ok(self.push(value, Op::Unfold(x, k)))
    }

    /// Subtracts the mean along the last axis.
    pub fn center_last(&self, x: Var) -> Result<Var> {
        let value = self.with(x, |t| -> Result<Tensor> {
            let l = *t.shape.last().ok_or_else(|| Error::contract("center_last", "scalar input"))?;
            let mut data = t.data.clone();
            for row in data.chunks_mut(l) {
                let m = row.iter().sum::<f64>() / l as f64;
                row.iter_mut().for_each(|v| *v -= m);
            }
            Ok(Tensor {
                shape: t.shape.clone(),
                data,
            })
        })?;
        Ok(self.push(value, Op::CenterLast(x)))
    }

    /// Batched matrix product `op(a)·op(b)` of `[B, ., .]` tensors, where
    /// `op` transposes the trailing two axes when the matching flag is set.
    pub fn bmm(&self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (dims, value) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (ba, a0, a1) = match *ta.shape.as_slice() {
                [x, y, z] => (x, y, z),
                _ => return Err(Error::contract("bmm", format!("lhs shape {:?} is not 3-D", ta.shape))),
            };
            let (bb, b0, b1) = match *tb.shape.as_slice() {
                [x, y, z] => (x, y, z),
                _ => return Err(Error::contract("bmm", format!("rhs shape {:?} is not 3-D", tb.shape))),
            };
            let (m, k) = if trans_a { (a1, a0) } else { (a0, a1) };
            let (kb, n) = if trans_b { (b1, b0) } else { (b0, b1) };
            if ba != bb || k != kb {
                return Err(Error::contract(
                    "bmm",
                    format!("cannot multiply {:?} by {:?}", ta.shape, tb.shape),
                ));
            }
            let data = kernels::bmm(&ta.data, &tb.data, ba, m, k, n, trans_a, trans_b);
            (
                (ba, m, k, n),
                Tensor {
                    shape: vec![ba, m, n],
                    data,
                },
            )
        };
        Ok(self.push(
            value,
            Op::Bmm {
                a,
                b,
                dims,
                trans: (trans_a, trans_b),
            },
        ))
    }

    /// Adds `eps·I` to every trailing square matrix.
    pub fn add_scaled_identity(&self, x: Var, eps: f64) -> Result<Var> {
        let value = self.with(x, |t| -> Result<Tensor> {
            let r = square_side(t, "add_scaled_identity")?;
            let mut data = t.data.clone();
            for m in data.chunks_mut(r * r) {
                for i in 0..r {
                    m[i * r + i] += eps;
                }
            }
            Ok(Tensor {
                shape: t.shape.clone(),
                data,
            })
        })?;
        Ok(self.push(value, Op::AddScaledIdentity(x)))
    }

    /// Inverse of the symmetric part of every trailing square matrix.
    pub fn spd_inverse(&self, x: Var) -> Result<Var> {
        let value = self.with(x, |t| -> Result<Tensor> {
            let r = square_side(t, "spd_inverse")?;
            let mut data = Vec::with_capacity(t.numel());
            for m in t.data.chunks(r * r) {
                data.extend(linalg::spd_inverse(m, r)?);
            }
            Ok(Tensor {
                shape: t.shape.clone(),
                data,
            })
        })?;
        Ok(self.push(value, Op::SpdInverse(x)))
    }

    /// `log det` of every trailing square matrix via Cholesky factorization.
    ///
    /// The factorization reads the symmetric part `(M + Mᵀ)/2`, so the
    /// gradient is symmetric. A `[R, R]` input yields a scalar; `[.., R, R]`
    /// yields one value per matrix.
    pub fn cholesky_logdet(&self, x: Var) -> Result<Var> {
        let (value, inverses) = self.with(x, |t| -> Result<(Tensor, Vec<f64>)> {
            let r = square_side(t, "cholesky_logdet")?;
            let mut out = Vec::with_capacity(t.numel() / (r * r));
            let mut inverses = Vec::with_capacity(t.numel());
            for m in t.data.chunks(r * r) {
                let l = linalg::cholesky(&linalg::symmetrize(m, r), r)?;
                out.push(linalg::logdet_from_cholesky(&l, r));
                inverses.extend(linalg::inverse_from_cholesky(&l, r));
            }
            let shape = &t.shape[..t.shape.len() - 2];
            Ok((Tensor::new(shape, out)?, inverses))
        })?;
        Ok(self.push(value, Op::LogDet(x, inverses)))
    }

    /// Reverse pass from a scalar loss. Gradients of tracked leaves accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            if matches!(nodes[id].op, Op::Leaf) {
                match nodes[id].grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                    None => nodes[id].grad = Some(g),
                }
                continue;
            }
            backprop(&nodes, id, &g, &mut grads);
        }
        Ok(())
    }
}

fn square_side(t: &Tensor, op: &'static str) -> Result<usize> {
    let s = t.shape();
    if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
        return Err(Error::contract(op, format!("expected trailing square matrices, got {s:?}")));
    }
    Ok(s[s.len() - 1])
}

/// Gradient slot for `v`, or `None` when `v` is not tracked.
fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
}

/// Accumulates `contrib` into a possibly scalar-broadcast operand.
fn acc_broadcast(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    v: Var,
    contrib: impl Iterator<Item = f64>,
) {
    let full = nodes[v.0].value.numel();
    if let Some(s) = slot(nodes, grads, v) {
        if full == 1 {
            s[0] += contrib.sum::<f64>();
        } else {
            s.iter_mut().zip(contrib).for_each(|(a, d)| *a += d);
        }
    }
}

fn val(nodes: &[Node], v: Var) -> &[f64] {
    &nodes[v.0].value.data
}

/// Value of a possibly scalar-broadcast operand at flat output index `i`.
fn at(data: &[f64], i: usize) -> f64 {
    if data.len() == 1 {
        data[0]
    } else {
        data[i]
    }
}

fn add_into(dst: Option<&mut Vec<f64>>, src: &[f64]) {
    if let Some(d) = dst {
        d.iter_mut().zip(src).for_each(|(a, b)| *a += b);
    }
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value.data;
    match &nodes[id].op {
        Op::Leaf => unreachable!("leaves are handled by the caller"),
        Op::Add(a, b) => {
            acc_broadcast(nodes, grads, *a, g.iter().copied());
            acc_broadcast(nodes, grads, *b, g.iter().copied());
        }
        Op::Sub(a, b) => {
            acc_broadcast(nodes, grads, *a, g.iter().copied());
            acc_broadcast(nodes, grads, *b, g.iter().map(|d| -d));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            acc_broadcast(nodes, grads, *a, g.iter().enumerate().map(|(i, d)| d * at(vb, i)));
            acc_broadcast(nodes, grads, *b, g.iter().enumerate().map(|(i, d)| d * at(va, i)));
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            acc_broadcast(nodes, grads, *a, g.iter().enumerate().map(|(i, d)| d / at(vb, i)));
            acc_broadcast(
                nodes,
                grads,
                *b,
                g.iter().enumerate().map(|(i, d)| {
                    let y = at(vb, i);
                    -d * at(va, i) / (y * y)
                }),
            );
        }
        Op::AddScalar(x) | Op::Reshape(x) | Op::AddScaledIdentity(x) => {
            add_into(slot(nodes, grads, *x), g);
        }
        Op::MulScalar(x, c) => {
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().zip(g).for_each(|(a, d)| *a += d * c);
            }
        }
        Op::Relu(x) => {
            let vx = val(nodes, *x);
            if let Some(s) = slot(nodes, grads, *x) {
                for ((a, d), &v) in s.iter_mut().zip(g).zip(vx) {
                    if v > 0.0 {
                        *a += d;
                    }
                }
            }
        }
        Op::Log(x) => {
            let vx = val(nodes, *x);
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().zip(g).zip(vx).for_each(|((a, d), v)| *a += d / v);
            }
        }
        Op::Exp(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().zip(g).zip(out).for_each(|((a, d), y)| *a += d * y);
            }
        }
        Op::Softplus(x) => {
            let vx = val(nodes, *x);
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut()
                    .zip(g)
                    .zip(vx)
                    .for_each(|((a, d), &v)| *a += d * sigmoid(v));
            }
        }
        Op::Sigmoid(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut()
                    .zip(g)
                    .zip(out)
                    .for_each(|((a, d), y)| *a += d * y * (1.0 - y));
            }
        }
        Op::Clamp(x, lo, hi) => {
            let vx = val(nodes, *x);
            if let Some(s) = slot(nodes, grads, *x) {
                for ((a, d), &v) in s.iter_mut().zip(g).zip(vx) {
                    if v > *lo && v < *hi {
                        *a += d;
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                s.iter_mut().for_each(|a| *a += g[0]);
            }
        }
        Op::Mean(x) => {
            if let Some(s) = slot(nodes, grads, *x) {
                let d = g[0] / s.len() as f64;
                s.iter_mut().for_each(|a| *a += d);
            }
        }
        Op::SumPerChannel(x) => {
            let shape = nodes[x.0].value.shape().to_vec();
            let (c, pix) = (shape[1], shape[2] * shape[3]);
            if let Some(s) = slot(nodes, grads, *x) {
                for (i, a) in s.iter_mut().enumerate() {
                    *a += g[(i / pix) % c];
                }
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
        } => {
            let need = (
                nodes[input.0].requires_grad,
                nodes[weight.0].requires_grad,
                nodes[bias.0].requires_grad,
            );
            let cg = kernels::conv2d_backward(
                val(nodes, *input),
                val(nodes, *weight),
                g,
                geom,
                need,
            );
            if let Some(dx) = cg.dx {
                add_into(slot(nodes, grads, *input), &dx);
            }
            if let Some(dw) = cg.dw {
                add_into(slot(nodes, grads, *weight), &dw);
            }
            if let Some(db) = cg.db {
                add_into(slot(nodes, grads, *bias), &db);
            }
        }
        Op::SoftmaxChannels(x) => {
            let shape = nodes[id].value.shape();
            let (n, c, pix) = (shape[0], shape[1], shape[2] * shape[3]);
            if let Some(s) = slot(nodes, grads, *x) {
                for i in 0..n {
                    let base = i * c * pix;
                    for p in 0..pix {
                        let dot: f64 = (0..c)
                            .map(|ch| g[base + ch * pix + p] * out[base + ch * pix + p])
                            .sum();
                        for ch in 0..c {
                            let k = base + ch * pix + p;
                            s[k] += out[k] * (g[k] - dot);
                        }
                    }
                }
            }
        }
        Op::LogSoftmaxChannels(x) => {
            let shape = nodes[id].value.shape();
            let (n, c, pix) = (shape[0], shape[1], shape[2] * shape[3]);
            if let Some(s) = slot(nodes, grads, *x) {
                for i in 0..n {
                    let base = i * c * pix;
                    for p in 0..pix {
                        let gs: f64 = (0..c).map(|ch| g[base + ch * pix + p]).sum();
                        for ch in 0..c {
                            let k = base + ch * pix + p;
                            s[k] += g[k] - out[k].exp() * gs;
                        }
                    }
                }
            }
        }
        Op::Concat(a, b) => {
            let sa = nodes[a.0].value.shape();
            let sb = nodes[b.0].value.shape();
            let (n, pix) = (sa[0], sa[2] * sa[3]);
            let (la, lb) = (sa[1] * pix, sb[1] * pix);
            if let Some(s) = slot(nodes, grads, *a) {
                for i in 0..n {
                    let src = &g[i * (la + lb)..i * (la + lb) + la];
                    s[i * la..(i + 1) * la].iter_mut().zip(src).for_each(|(x, d)| *x += d);
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                for i in 0..n {
                    let src = &g[i * (la + lb) + la..(i + 1) * (la + lb)];
                    s[i * lb..(i + 1) * lb].iter_mut().zip(src).for_each(|(x, d)| *x += d);
                }
            }
        }
        Op::UpsampleNearest2(x) => {
            let shape = nodes[x.0].value.shape();
            let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
            if let Some(s) = slot(nodes, grads, *x) {
                let wo = 2 * w;
                for pl in 0..planes {
                    for oy in 0..2 * h {
                        for ox in 0..wo {
                            s[pl * h * w + (oy / 2) * w + ox / 2] += g[pl * 4 * h * w + oy * wo + ox];
                        }
                    }
                }
            }
        }
        Op::MaxPool2(x, arg) => {
            if let Some(s) = slot(nodes, grads, *x) {
                for (d, &i) in g.iter().zip(arg) {
                    s[i] += d;
                }
            }
        }
        Op::AvgPool(x, f) => {
            let shape = nodes[x.0].value.shape();
            let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
            let (ho, wo) = (h / f, w / f);
            let inv = 1.0 / (f * f) as f64;
            if let Some(s) = slot(nodes, grads, *x) {
                for pl in 0..planes {
                    for y in 0..h {
                        for xx in 0..w {
                            s[pl * h * w + y * w + xx] += g[pl * ho * wo + (y / f) * wo + xx / f] * inv;
                        }
                    }
                }
            }
        }
        Op::Unfold(x, k) => {
            let shape = nodes[x.0].value.shape();
            let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
            let dx = kernels::unfold_backward(g, planes, h, w, *k);
            add_into(slot(nodes, grads, *x), &dx);
        }
        Op::CenterLast(x) => {
            let l = *nodes[x.0].value.shape().last().unwrap();
            if let Some(s) = slot(nodes, grads, *x) {
                for (srow, grow) in s.chunks_mut(l).zip(g.chunks(l)) {
                    let m = grow.iter().sum::<f64>() / l as f64;
                    srow.iter_mut().zip(grow).for_each(|(a, d)| *a += d - m);
                }
            }
        }
        Op::Bmm {
            a,
            b,
            dims: (batch, m, k, n),
            trans: (ta, tb),
        } => {
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            if let Some(s) = slot(nodes, grads, *a) {
                kernels::bmm_grad_a(g, vb, *batch, *m, *k, *n, *ta, *tb, s);
            }
            if let Some(s) = slot(nodes, grads, *b) {
                kernels::bmm_grad_b(g, va, *batch, *m, *k, *n, *ta, *tb, s);
            }
        }
        Op::SpdInverse(x) => {
            let r = *nodes[x.0].value.shape().last().unwrap();
            if let Some(s) = slot(nodes, grads, *x) {
                for ((sm, gm), inv) in s.chunks_mut(r * r).zip(g.chunks(r * r)).zip(out.chunks(r * r)) {
                    // d/dS of <G, S⁻¹> is −S⁻¹ G S⁻¹; symmetrize for the (M + Mᵀ)/2 read.
                    let mut t = vec![0.0; r * r];
                    for i in 0..r {
                        for j in 0..r {
                            t[i * r + j] = (0..r).map(|q| inv[i * r + q] * gm[q * r + j]).sum();
                        }
                    }
                    for i in 0..r {
                        for j in 0..r {
                            let v: f64 = (0..r).map(|q| t[i * r + q] * inv[q * r + j]).sum();
                            sm[i * r + j] -= 0.5 * v;
                            sm[j * r + i] -= 0.5 * v;
                        }
                    }
                }
            }
        }
        Op::LogDet(x, inverses) => {
            let r = *nodes[x.0].value.shape().last().unwrap();
            if let Some(s) = slot(nodes, grads, *x) {
                for ((sm, inv), d) in s.chunks_mut(r * r).zip(inverses.chunks(r * r)).zip(g) {
                    sm.iter_mut().zip(inv).for_each(|(a, v)| *a += d * v);
                }
            }
        }
    }
}

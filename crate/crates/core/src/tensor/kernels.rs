//! Raw slice kernels behind the graph ops. Layout is always row-major NCHW.
//!
//! Per-image work is spread over rayon workers, but every cross-image
//! reduction (weight and bias gradients) is summed in image order so the
//! result does not depend on the worker count.

use rayon::prelude::*;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `C = A·B` (beta = 0) or `C += A·B` (beta = 1) with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every caller passes slices whose extents cover the strided
    // m×k, k×n and m×n index ranges; the asserts below check the far corners.
    debug_assert!(a.len() as isize > (m as isize - 1) * rsa + (k as isize - 1) * csa || k == 0);
    debug_assert!(b.len() as isize > (k as isize - 1) * rsb + (n as isize - 1) * csb || k == 0);
    debug_assert!(c.len() as isize > (m as isize - 1) * rsc + (n as isize - 1) * csc);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Row-major `m×n` product `A·B` in a fresh buffer; skips zero-filling.
fn gemm_new(m: usize, k: usize, n: usize, a: &[f64], sa: (isize, isize), b: &[f64], sb: (isize, isize)) -> Vec<f64> {
    if k == 0 {
        return vec![0.0; m * n];
    }
    debug_assert!(a.len() as isize > (m as isize - 1) * sa.0 + (k as isize - 1) * sa.1);
    debug_assert!(b.len() as isize > (k as isize - 1) * sb.0 + (n as isize - 1) * sb.1);
    let mut c = Vec::with_capacity(m * n);
    // SAFETY: with β = 0 dgemm never reads C and writes all m·n entries,
    // after which the buffer is fully initialized.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
        c.set_len(m * n);
    }
    c
}

/// Output columns `ox` whose input column `ox·s + kj − p` lies in `0..w`.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let (s, p) = (g.stride as isize, g.pad as isize);
    let off = kj as isize - p;
    // smallest ox with ox·s + off >= 0, and one past the largest with ox·s + off < w
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = ((g.w as isize - off + s - 1) / s).clamp(0, g.w_out as isize);
    (lo.min(hi) as usize, hi as usize)
}

/// Appends the `[c_in·k·k, h_out·w_out]` patch matrix of one image to `col`.
fn im2col(img: &[f64], g: &ConvGeom, col: &mut Vec<f64>) {
    let (s, p) = (g.stride, g.pad as isize);
    for c in 0..g.c_in {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let (lo, hi) = valid_cols(g, kj);
                let off = kj as isize - p;
                for oy in 0..g.h_out {
                    let iy = (oy * s) as isize + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        col.extend(std::iter::repeat_n(0.0, g.w_out));
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    col.extend(std::iter::repeat_n(0.0, lo));
                    if s == 1 {
                        let start = (lo as isize + off) as usize;
                        col.extend_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        col.extend((lo..hi).map(|ox| src[(ox as isize * s as isize + off) as usize]));
                    }
                    col.extend(std::iter::repeat_n(0.0, g.w_out - hi));
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let (s, p) = (g.stride, g.pad as isize);
    let pix = g.out_pixels();
    for c in 0..g.c_in {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * pix..(row + 1) * pix];
                let (lo, hi) = valid_cols(g, kj);
                let off = kj as isize - p;
                for oy in 0..g.h_out {
                    let iy = (oy * s) as isize + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.w_out + lo..oy * g.w_out + hi];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if s == 1 {
                        let start = (lo as isize + off) as usize;
                        dst[start..start + line.len()]
                            .iter_mut()
                            .zip(line)
                            .for_each(|(d, v)| *d += v);
                    } else {
                        for (i, v) in line.iter().enumerate() {
                            dst[((lo + i) as isize * s as isize + off) as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let in_len = g.c_in * g.h * g.w;
    let pix = g.out_pixels();
    let rows = g.col_rows();
    let mut out = vec![0.0; g.n * g.c_out * pix];
    out.par_chunks_mut(g.c_out * pix)
        .zip(x.par_chunks(in_len))
        .for_each(|(dst, img)| {
            let owned;
            let col: &[f64] = if g.is_pointwise() {
                img
            } else {
                let mut buf = Vec::with_capacity(rows * pix);
                im2col(img, g, &mut buf);
                owned = buf;
                &owned
            };
            gemm(
                g.c_out,
                rows,
                pix,
                weight,
                (rows as isize, 1),
                col,
                (pix as isize, 1),
                0.0,
                dst,
                (pix as isize, 1),
            );
            for (o, b) in bias.iter().enumerate() {
                dst[o * pix..(o + 1) * pix].iter_mut().for_each(|v| *v += b);
            }
        });
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads {
    let (need_dx, need_dw, need_db) = need;
    let in_len = g.c_in * g.h * g.w;
    let pix = g.out_pixels();
    let rows = g.col_rows();
    let out_len = g.c_out * pix;

    let per_image: Vec<(Option<Vec<f64>>, Option<Vec<f64>>)> = (0..g.n)
        .into_par_iter()
        .map(|i| {
            let img = &x[i * in_len..(i + 1) * in_len];
            let go = &dout[i * out_len..(i + 1) * out_len];
            let dw = need_dw.then(|| {
                let owned;
                let col: &[f64] = if g.is_pointwise() {
                    img
                } else {
                    let mut buf = Vec::with_capacity(rows * pix);
                    im2col(img, g, &mut buf);
                    owned = buf;
                    &owned
                };
                let dw = gemm_new(g.c_out, pix, rows, go, (pix as isize, 1), col, (1, pix as isize));
                dw
            });
            let dx = need_dx.then(|| {
                let dcol = gemm_new(rows, g.c_out, pix, weight, (1, rows as isize), go, (pix as isize, 1));
                if g.is_pointwise() {
                    dcol
                } else {
                    let mut dx = vec![0.0; in_len];
                    col2im_add(&dcol, g, &mut dx);
                    dx
                }
            });
            (dx, dw)
        })
        .collect();

    let mut grads = ConvGrads {
        dx: need_dx.then(|| Vec::with_capacity(g.n * in_len)),
        dw: need_dw.then(|| vec![0.0; g.c_out * rows]),
        db: None,
    };
    for (dx, dw) in per_image {
        if let (Some(acc), Some(dx)) = (grads.dx.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
        if let (Some(acc), Some(dw)) = (grads.dw.as_mut(), dw) {
            acc.iter_mut().zip(&dw).for_each(|(a, d)| *a += d);
        }
    }
    if need_db {
        let mut db = vec![0.0; g.c_out];
        for i in 0..g.n {
            for (o, acc) in db.iter_mut().enumerate() {
                let base = i * out_len + o * pix;
                *acc += dout[base..base + pix].iter().sum::<f64>();
            }
        }
        grads.db = Some(db);
    }
    grads
}

/// Softmax over the channel axis of an `[n, c, pix]` layout.
pub(crate) fn softmax_channels(x: &[f64], n: usize, c: usize, pix: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        let base = i * c * pix;
        for p in 0..pix {
            let mut m = f64::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(x[base + ch * pix + p]);
            }
            let mut s = 0.0;
            for ch in 0..c {
                let e = (x[base + ch * pix + p] - m).exp();
                out[base + ch * pix + p] = e;
                s += e;
            }
            for ch in 0..c {
                out[base + ch * pix + p] /= s;
            }
        }
    }
    out
}

pub(crate) fn log_softmax_channels(x: &[f64], n: usize, c: usize, pix: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        let base = i * c * pix;
        for p in 0..pix {
            let mut m = f64::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(x[base + ch * pix + p]);
            }
            let mut s = 0.0;
            for ch in 0..c {
                s += (x[base + ch * pix + p] - m).exp();
            }
            let lse = m + s.ln();
            for ch in 0..c {
                out[base + ch * pix + p] = x[base + ch * pix + p] - lse;
            }
        }
    }
    out
}

/// 2×2 max pooling; returns values and the flat input index of each maximum
/// (first maximum in row-major window order wins ties).
pub(crate) fn max_pool2(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut arg = Vec::with_capacity(planes * ho * wo);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn avg_pool(x: &[f64], planes: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (ho, wo) = (h / f, w / f);
    let inv = 1.0 / (f * f) as f64;
    let mut out = Vec::with_capacity(planes * ho * wo);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        s += x[base + (f * oy + dy) * w + f * ox + dx];
                    }
                }
                out.push(s * inv);
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(planes * ho * wo);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                out.push(x[base + (oy / 2) * w + ox / 2]);
            }
        }
    }
    out
}

/// Gathers every valid `k×k` neighborhood: `[planes, h, w]` becomes
/// `[planes, k*k, L]` with `L = (h-k+1)(w-k+1)`.
pub(crate) fn unfold(x: &[f64], planes: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (lh, lw) = (h + 1 - k, w + 1 - k);
    let l = lh * lw;
    let mut out = vec![0.0; planes * k * k * l];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        for di in 0..k {
            for dj in 0..k {
                let r = di * k + dj;
                let dst = &mut out[(pl * k * k + r) * l..(pl * k * k + r + 1) * l];
                for i in 0..lh {
                    for j in 0..lw {
                        dst[i * lw + j] = src[(i + di) * w + j + dj];
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn unfold_backward(g: &[f64], planes: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (lh, lw) = (h + 1 - k, w + 1 - k);
    let l = lh * lw;
    let mut dx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for di in 0..k {
            for dj in 0..k {
                let r = di * k + dj;
                let src = &g[(pl * k * k + r) * l..(pl * k * k + r + 1) * l];
                for i in 0..lh {
                    for j in 0..lw {
                        dst[(i + di) * w + j + dj] += src[i * lw + j];
                    }
                }
            }
        }
    }
    dx
}

/// Batched `op(A)·op(B)` for `[batch, ., .]` operands stored row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bmm(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    for i in 0..batch {
        let am = &a[i * m * k..(i + 1) * m * k];
        let bm = &b[i * k * n..(i + 1) * k * n];
        let sa = if trans_a { (1, m as isize) } else { (k as isize, 1) };
        let sb = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        gemm(
            m,
            k,
            n,
            am,
            sa,
            bm,
            sb,
            0.0,
            &mut out[i * m * n..(i + 1) * m * n],
            (n as isize, 1),
        );
    }
    out
}

/// Accumulates `G·op(B)ᵀ` into the gradient of A (stored transposed if `trans_a`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn bmm_grad_a(
    g: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    da: &mut [f64],
) {
    for i in 0..batch {
        let gm = &g[i * m * n..(i + 1) * m * n];
        let bm = &b[i * k * n..(i + 1) * k * n];
        // op(B)ᵀ as an n×k operand
        let sbt = if trans_b { (k as isize, 1) } else { (1, n as isize) };
        let sc = if trans_a { (1, m as isize) } else { (k as isize, 1) };
        gemm(
            m,
            n,
            k,
            gm,
            (n as isize, 1),
            bm,
            sbt,
            1.0,
            &mut da[i * m * k..(i + 1) * m * k],
            sc,
        );
    }
}

/// Accumulates `op(A)ᵀ·G` into the gradient of B (stored transposed if `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn bmm_grad_b(
    g: &[f64],
    a: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    db: &mut [f64],
) {
    for i in 0..batch {
        let gm = &g[i * m * n..(i + 1) * m * n];
        let am = &a[i * m * k..(i + 1) * m * k];
        // op(A)ᵀ as a k×m operand
        let sat = if trans_a { (m as isize, 1) } else { (1, k as isize) };
        let sc = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        gemm(
            k,
            m,
            n,
            am,
            sat,
            gm,
            (n as isize, 1),
            1.0,
            &mut db[i * k * n..(i + 1) * k * n],
            sc,
        );
    }
}

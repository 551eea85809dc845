//! Small dense SPD routines for the covariance matrices of the region
//! mutual-information distance (R ≤ a few dozen).

use crate::error::{Error, Result};

/// Symmetric part `(m + mᵀ)/2` of a row-major `n×n` matrix.
pub fn symmetrize(m: &[f64], n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
        }
    }
    s
}

/// Lower-triangular Cholesky factor of an SPD matrix. Reads the lower triangle.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(l)
}

pub fn logdet_from_cholesky(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0
}

/// Inverse of `L·Lᵀ` given its Cholesky factor.
pub fn inverse_from_cholesky(l: &[f64], n: usize) -> Vec<f64> {
    // Solve L·Lᵀ·X = I one column at a time.
    let mut inv = vec![0.0; n * n];
    let mut y = vec![0.0; n];
    for col in 0..n {
        for i in 0..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i] * inv[k * n + col];
            }
            inv[i * n + col] = s / l[i * n + i];
        }
    }
    // Symmetric by construction up to rounding; make it exact.
    symmetrize(&inv, n)
}

/// `log det` of the symmetric part of `m`.
pub fn spd_logdet(m: &[f64], n: usize) -> Result<f64> {
    let l = cholesky(&symmetrize(m, n), n)?;
    Ok(logdet_from_cholesky(&l, n))
}

/// Inverse of the symmetric part of `m`.
pub fn spd_inverse(m: &[f64], n: usize) -> Result<Vec<f64>> {
    let l = cholesky(&symmetrize(m, n), n)?;
    Ok(inverse_from_cholesky(&l, n))
}

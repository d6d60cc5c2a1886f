//! Dense symmetric linear algebra for the metric suite.
//!
//! Matrices are row-major `Vec<f64>` of size n*n. The eigensolver is a cyclic
//! Jacobi rotation scheme, which is accurate and entirely adequate for the
//! 32x32 covariance matrices used here.

use crate::error::{Error, Result};

pub fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
    c
}

pub fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

pub fn trace(a: &[f64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

pub fn frobenius_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest absolute asymmetry |a_ij - a_ji|.
pub fn asymmetry(a: &[f64], n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues ascending and the
/// eigenvectors as COLUMNS of the returned row-major matrix, so that
/// `A = V diag(w) V^T`.
pub fn sym_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    // Work on the symmetrized copy; callers validate asymmetry tolerance.
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        let scale = frobenius_norm(&m).max(1e-300);
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of m.
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
    let w: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vs = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vs[k * n + new_col] = v[k * n + old_col];
        }
    }
    (w, vs)
}

/// Square root of a symmetric positive semi-definite matrix via symmetric
/// eigendecomposition: `S = V diag(sqrt(w)) V^T` with `S S = M`.
///
/// Eigenvalues slightly below zero (within `-1e-6 * max(1, w_max)`) are
/// clamped to zero; anything more negative, or asymmetry beyond 1e-6 of the
/// matrix scale, is a structural error.
pub fn matrix_sqrt_psd(m: &[f64], n: usize) -> Result<Vec<f64>> {
    if m.len() != n * n {
        return Err(Error::shape(format!(
            "matrix has {} entries, expected {}",
            m.len(),
            n * n
        )));
    }
    let scale = frobenius_norm(m).max(1.0);
    let asym = asymmetry(m, n);
    if asym > 1e-6 * scale {
        return Err(Error::invalid(format!(
            "matrix is not symmetric: asymmetry {asym:.3e} exceeds tolerance"
        )));
    }
    let (w, v) = sym_eigen(m, n);
    let w_max = w.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-6 * w_max.max(1.0);
    let mut sqrt_w = Vec::with_capacity(n);
    for &lambda in &w {
        if lambda < -tol {
            return Err(Error::invalid(format!(
                "matrix is not PSD: eigenvalue {lambda:.3e} below tolerance"
            )));
        }
        sqrt_w.push(lambda.max(0.0).sqrt());
    }
    // S = V diag(sqrt_w) V^T
    let mut vs = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vs[i * n + j] = v[i * n + j] * sqrt_w[j];
        }
    }
    let s = mat_mul(&vs, &transpose(&v, n), n);
    // Symmetrize away rounding noise from the two products.
    let mut out = s;
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = avg;
            out[j * n + i] = avg;
        }
    }
    Ok(out)
}

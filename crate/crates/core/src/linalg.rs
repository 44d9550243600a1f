//! Small dense helpers for the weighted least-squares core.
//!
//! p is tiny (a handful of covariates); m is moderate. GLS is computed
//! through a Householder QR of the weighted design rather than the
//! normal equations, so rank deficiency is detected where it occurs.

use crate::error::{FhError, Result};

pub struct WlsFit {
    pub beta: Vec<f64>,
    /// Upper-triangular p x p factor with X'WX = R'R (row-major).
    pub r: Vec<f64>,
    /// Residuals y - X beta (unweighted scale).
    pub resid: Vec<f64>,
}

/// Weighted least squares via Householder QR of diag(sqrt(w)) X.
///
/// `x` is row-major m x p, `w` are positive weights. Errors on rank
/// deficiency of the weighted design.
pub fn weighted_least_squares(x: &[f64], y: &[f64], w: &[f64], p: usize) -> Result<WlsFit> {
    let m = y.len();
    assert!(p >= 1 && m >= p);
    // weighted design and response
    let mut a = vec![0.0; m * p];
    let mut b = vec![0.0; m];
    for i in 0..m {
        let s = w[i].sqrt();
        for j in 0..p {
            a[i * p + j] = s * x[i * p + j];
        }
        b[i] = s * y[i];
    }
    // Householder QR, applying reflectors to b as we go
    let mut col_scale = 0.0f64;
    for k in 0..p {
        let mut norm2 = 0.0;
        for i in k..m {
            norm2 += a[i * p + k] * a[i * p + k];
        }
        let norm = norm2.sqrt();
        if k == 0 {
            col_scale = norm;
        }
        let tol = f64::EPSILON * 1e4 * col_scale.max(1e-300);
        if norm <= tol {
            return Err(FhError::RankDeficient(format!(
                "weighted design column {k} is numerically dependent on earlier columns \
                 (norm {norm:.3e} <= tol {tol:.3e})"
            )));
        }
        let akk = a[k * p + k];
        let alpha = if akk >= 0.0 { -norm } else { norm };
        // v = a[k..,k] - alpha e1
        let mut v = vec![0.0; m - k];
        for i in k..m {
            v[i - k] = a[i * p + k];
        }
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|u| u * u).sum();
        if vtv > 0.0 {
            for j in k..p {
                let mut dot = 0.0;
                for i in k..m {
                    dot += v[i - k] * a[i * p + j];
                }
                let c = 2.0 * dot / vtv;
                for i in k..m {
                    a[i * p + j] -= c * v[i - k];
                }
            }
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i - k] * b[i];
            }
            let c = 2.0 * dot / vtv;
            for i in k..m {
                b[i] -= c * v[i - k];
            }
        }
        a[k * p + k] = alpha;
        for i in (k + 1)..m {
            a[i * p + k] = 0.0;
        }
    }
    // back substitution: R beta = Q'b (first p rows)
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = b[k];
        for j in (k + 1)..p {
            s -= a[k * p + j] * beta[j];
        }
        beta[k] = s / a[k * p + k];
    }
    let mut r = vec![0.0; p * p];
    for k in 0..p {
        for j in k..p {
            r[k * p + j] = a[k * p + j];
        }
    }
    let mut resid = vec![0.0; m];
    for i in 0..m {
        let mut fit = 0.0;
        for j in 0..p {
            fit += x[i * p + j] * beta[j];
        }
        resid[i] = y[i] - fit;
    }
    Ok(WlsFit { beta, r, resid })
}

/// Solve R'z = v with R upper triangular (row-major p x p).
pub fn solve_lower_transposed(r: &[f64], v: &[f64], p: usize) -> Vec<f64> {
    let mut z = vec![0.0; p];
    for k in 0..p {
        let mut s = v[k];
        for j in 0..k {
            s -= r[j * p + k] * z[j];
        }
        z[k] = s / r[k * p + k];
    }
    z
}

/// Solve R u = z with R upper triangular (row-major p x p).
pub fn solve_upper(r: &[f64], z: &[f64], p: usize) -> Vec<f64> {
    let mut u = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = z[k];
        for j in (k + 1)..p {
            s -= r[k * p + j] * u[j];
        }
        u[k] = s / r[k * p + k];
    }
    u
}

/// Quadratic form v'(R'R)^{-1}v given the upper-triangular factor R.
pub fn inv_quad_form(r: &[f64], v: &[f64], p: usize) -> f64 {
    solve_lower_transposed(r, v, p).iter().map(|z| z * z).sum()
}

/// log det(R'R) = 2 sum log |R_kk|.
pub fn log_det_from_r(r: &[f64], p: usize) -> f64 {
    (0..p).map(|k| r[k * p + k].abs().ln()).sum::<f64>() * 2.0
}

/// Solve (R'R) U = B for a p x p right-hand side B (row-major), i.e.
/// U = (X'WX)^{-1} B.
pub fn solve_spd_matrix(r: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut u = vec![0.0; p * p];
    for col in 0..p {
        let v: Vec<f64> = (0..p).map(|row| b[row * p + col]).collect();
        let z = solve_lower_transposed(r, &v, p);
        let s = solve_upper(r, &z, p);
        for row in 0..p {
            u[row * p + col] = s[row];
        }
    }
    u
}

pub fn mat_trace(a: &[f64], p: usize) -> f64 {
    (0..p).map(|k| a[k * p + k]).sum()
}

pub fn mat_mul(a: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * p];
    for i in 0..p {
        for k in 0..p {
            let aik = a[i * p + k];
            if aik != 0.0 {
                for j in 0..p {
                    c[i * p + j] += aik * b[k * p + j];
                }
            }
        }
    }
    c
}

//! Restricted (residual) log-likelihood of the variance component A and
//! its analytic derivatives.
//!
//! The projection P(A) = V^-1 - V^-1 X (X'V^-1 X)^-1 X'V^-1 is never
//! materialized: every quantity is evaluated through GLS residuals and
//! p x p accumulations, O(m p^2) per evaluation. The additive constant
//! of the log-likelihood is fixed to zero; all consumers use ratios or
//! argmax values.

use crate::dataset::FhDataset;
use crate::error::{FhError, Result};
use crate::linalg;
use crate::model::gls_fit;

/// Evaluation of the restricted likelihood machinery at one A.
#[derive(Debug, Clone)]
pub struct RemlEval {
    pub a: f64,
    /// log L_RE(A), up to an A-independent constant.
    pub log_lre: f64,
    /// Scaled negative log-likelihood k(A) = -log L_RE(A) / m.
    pub k: f64,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    /// tr[V^-2] = sum (A+D_u)^-2.
    pub trv2: f64,
    /// tr[V^-3] = sum (A+D_u)^-3.
    pub trv3: f64,
    /// y'P(A)y, computed through GLS residuals.
    pub quad_form: f64,
}

pub fn tr_v2(data: &FhDataset, a: f64) -> f64 {
    data.d().iter().map(|&di| (a + di).powi(-2)).sum()
}

pub fn tr_v3(data: &FhDataset, a: f64) -> f64 {
    data.d().iter().map(|&di| (a + di).powi(-3)).sum()
}

/// Restricted log-likelihood at A (no derivatives).
///
/// For p = 0 this is the marginal likelihood of the mean-zero model:
/// -1/2 sum log(A+D_i) - 1/2 sum y_i^2/(A+D_i).
pub fn reml_log_likelihood(data: &FhDataset, a: f64) -> Result<RemlEval> {
    if !a.is_finite() || a < 0.0 {
        return Err(FhError::InvalidData(format!(
            "restricted likelihood needs finite A >= 0, got {a}"
        )));
    }
    let m = data.m() as f64;
    let p = data.p();
    let fit = gls_fit(data, a)?;
    let mut log_det_v = 0.0;
    let mut quad = 0.0;
    for (j, &dj) in data.d().iter().enumerate() {
        let v = a + dj;
        log_det_v += v.ln();
        quad += fit.resid[j] * fit.resid[j] / v;
    }
    let log_det_g = if p == 0 {
        0.0
    } else {
        linalg::log_det_from_r(&fit.r_factor, p)
    };
    let log_lre = -0.5 * log_det_v - 0.5 * log_det_g - 0.5 * quad;
    Ok(RemlEval {
        a,
        log_lre,
        k: -log_lre / m,
        k1: None,
        k2: None,
        k3: None,
        trv2: tr_v2(data, a),
        trv3: tr_v3(data, a),
        quad_form: quad,
    })
}

/// First derivative of log L_RE:
/// l'(A) = (y'P^2 y - tr P)/2, with Py = V^-1 (y - X beta).
pub fn log_lre_d1(data: &FhDataset, a: f64) -> Result<f64> {
    let p = data.p();
    let fit = gls_fit(data, a)?;
    let mut ypsq = 0.0;
    let mut tr_vinv = 0.0;
    for (j, &dj) in data.d().iter().enumerate() {
        let v = a + dj;
        ypsq += (fit.resid[j] / v).powi(2);
        tr_vinv += 1.0 / v;
    }
    let tr_p = if p == 0 {
        tr_vinv
    } else {
        let m2 = xv_power_x(data, a, 2);
        let g_inv_m2 = linalg::solve_spd_matrix(&fit.r_factor, &m2, p);
        tr_vinv - linalg::mat_trace(&g_inv_m2, p)
    };
    Ok(0.5 * (ypsq - tr_p))
}

/// Second derivative of log L_RE:
/// l''(A) = tr(P^2)/2 - y'P^3 y.
pub fn log_lre_d2(data: &FhDataset, a: f64) -> Result<f64> {
    let p = data.p();
    let fit = gls_fit(data, a)?;
    let trv2 = tr_v2(data, a);
    // u = P y
    let u: Vec<f64> = fit
        .resid
        .iter()
        .zip(data.d())
        .map(|(r, &dj)| r / (a + dj))
        .collect();
    let mut u_vinv_u = 0.0;
    for (j, &dj) in data.d().iter().enumerate() {
        u_vinv_u += u[j] * u[j] / (a + dj);
    }
    let (tr_p2, yp3y) = if p == 0 {
        (trv2, u_vinv_u)
    } else {
        let m2 = xv_power_x(data, a, 2);
        let m3 = xv_power_x(data, a, 3);
        let g_inv_m2 = linalg::solve_spd_matrix(&fit.r_factor, &m2, p);
        let g_inv_m3 = linalg::solve_spd_matrix(&fit.r_factor, &m3, p);
        let tr_p2 = trv2 - 2.0 * linalg::mat_trace(&g_inv_m3, p)
            + linalg::mat_trace(&linalg::mat_mul(&g_inv_m2, &g_inv_m2, p), p);
        // y'P^3 y = u'P u = u'V^-1 u - t'G^-1 t with t = X'V^-1 u
        let mut t = vec![0.0; p];
        for (j, &dj) in data.d().iter().enumerate() {
            let w = u[j] / (a + dj);
            for (k, &xjk) in data.x_row(j).iter().enumerate() {
                t[k] += w * xjk;
            }
        }
        let yp3y = u_vinv_u - linalg::inv_quad_form(&fit.r_factor, &t, p);
        (tr_p2, yp3y)
    };
    Ok(0.5 * tr_p2 - yp3y)
}

/// Derivatives of the scaled negative log-likelihood k(A) = -log L_RE/m.
///
/// k1 and k2 are analytic. k3 is analytic in the balanced case and a
/// central difference of the analytic k2 elsewhere (it only feeds
/// order-of-magnitude diagnostics).
pub fn reml_derivatives(data: &FhDataset, a: f64) -> Result<(f64, f64, f64)> {
    if a <= 0.0 {
        return Err(FhError::InvalidData(format!(
            "derivatives of k need A > 0, got {a}"
        )));
    }
    let m = data.m() as f64;
    let k1 = -log_lre_d1(data, a)? / m;
    let k2 = -log_lre_d2(data, a)? / m;
    let k3 = if data.is_balanced() {
        // balanced: k = (m-p)/(2m) log(A+D) + S/(2m(A+D)) + const,
        // S the OLS residual sum of squares
        let d = data.d()[0];
        let p = data.p() as f64;
        let s: f64 = if data.p() == 0 {
            data.y().iter().map(|y| y * y).sum()
        } else {
            gls_fit(data, a)?.resid.iter().map(|r| r * r).sum()
        };
        let v = a + d;
        (m - p) / (m * v.powi(3)) - 3.0 * s / (m * v.powi(4))
    } else {
        let h = (1e-4f64).max(1e-4 * a);
        let k2p = -log_lre_d2(data, a + h)? / m;
        let a_lo = (a - h).max(a * 1e-3);
        let k2m = -log_lre_d2(data, a_lo)? / m;
        (k2p - k2m) / (a + h - a_lo)
    };
    Ok((k1, k2, k3))
}

/// Leading-order approximations of k2 and k3 used by the expansion
/// machinery: k2 ~ tr[V^-2]/2m, k3 ~ -2 tr[V^-3]/m.
pub fn reml_derivative_approximations(data: &FhDataset, a: f64) -> (f64, f64) {
    let m = data.m() as f64;
    (tr_v2(data, a) / (2.0 * m), -2.0 * tr_v3(data, a) / m)
}

/// X' V^-pow X as a row-major p x p matrix.
fn xv_power_x(data: &FhDataset, a: f64, pow: i32) -> Vec<f64> {
    let p = data.p();
    let mut out = vec![0.0; p * p];
    for (j, &dj) in data.d().iter().enumerate() {
        let w = (a + dj).powi(-pow);
        let xj = data.x_row(j);
        for r in 0..p {
            for c in r..p {
                out[r * p + c] += w * xj[r] * xj[c];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            out[r * p + c] = out[c * p + r];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_dataset(m: usize, p: usize, seed: u64) -> FhDataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let d: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..2.0)).collect();
        let x: Vec<f64> = (0..m * p)
            .map(|k| {
                if p > 0 && k % p == 0 {
                    1.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        FhDataset::new(y, d, x, p).unwrap()
    }

    /// Dense-matrix oracle for y'P(A)y on small instances.
    fn dense_quad_form(data: &FhDataset, a: f64) -> f64 {
        let m = data.m();
        let p = data.p();
        let vinv: Vec<f64> = data.d().iter().map(|&dj| 1.0 / (a + dj)).collect();
        if p == 0 {
            return data
                .y()
                .iter()
                .zip(&vinv)
                .map(|(y, w)| y * y * w)
                .sum();
        }
        // G = X'V^-1 X and its inverse via Gauss-Jordan
        let mut g = vec![0.0; p * p];
        for j in 0..m {
            for r in 0..p {
                for c in 0..p {
                    g[r * p + c] += vinv[j] * data.x_row(j)[r] * data.x_row(j)[c];
                }
            }
        }
        let mut inv = vec![0.0; p * p];
        for k in 0..p {
            inv[k * p + k] = 1.0;
        }
        for k in 0..p {
            let piv = g[k * p + k];
            for c in 0..p {
                g[k * p + c] /= piv;
                inv[k * p + c] /= piv;
            }
            for r in 0..p {
                if r != k {
                    let f = g[r * p + k];
                    for c in 0..p {
                        g[r * p + c] -= f * g[k * p + c];
                        inv[r * p + c] -= f * inv[k * p + c];
                    }
                }
            }
        }
        // y'Py = y'V^-1 y - (X'V^-1 y)' G^-1 (X'V^-1 y)
        let mut yvy = 0.0;
        let mut t = vec![0.0; p];
        for j in 0..m {
            yvy += data.y()[j] * data.y()[j] * vinv[j];
            for r in 0..p {
                t[r] += vinv[j] * data.x_row(j)[r] * data.y()[j];
            }
        }
        let mut quad = yvy;
        for r in 0..p {
            for c in 0..p {
                quad -= t[r] * inv[r * p + c] * t[c];
            }
        }
        quad
    }

    #[test]
    fn residual_quad_form_matches_dense_oracle() {
        for m in [3usize, 4, 6] {
            for p in [0usize, 1, 2] {
                if m <= p + 1 {
                    continue;
                }
                let data = random_dataset(m, p, (m * 10 + p) as u64);
                for &a in &[0.0, 0.4, 2.0] {
                    let eval = reml_log_likelihood(&data, a).unwrap();
                    let oracle = dense_quad_form(&data, a);
                    assert!(
                        (eval.quad_form - oracle).abs() <= 1e-10 * oracle.abs().max(1.0),
                        "m={m} p={p} A={a}: {} vs {}",
                        eval.quad_form,
                        oracle
                    );
                    assert!(eval.quad_form >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn translation_invariance_in_covariate_span() {
        let data = random_dataset(8, 2, 7);
        let shift = [0.7, -2.3];
        let y2: Vec<f64> = (0..8)
            .map(|i| {
                data.y()[i] + data.x_row(i)[0] * shift[0] + data.x_row(i)[1] * shift[1]
            })
            .collect();
        let data2 = FhDataset::new(y2, data.d().to_vec(), data.x().to_vec(), 2).unwrap();
        for &a in &[0.2, 1.0, 5.0] {
            let l1 = reml_log_likelihood(&data, a).unwrap().log_lre;
            let l2 = reml_log_likelihood(&data2, a).unwrap().log_lre;
            assert!((l1 - l2).abs() < 1e-9, "A={a}: {l1} vs {l2}");
        }
    }

    #[test]
    fn two_area_hand_expansion() {
        // m=2, p=1 intercept, D=(1,1), A=1:
        // |V| = 4, |X'V^-1 X| = 1, y'Py = (y1-y2)^2/4
        let y = (0.3f64, 2.1f64);
        let data = FhDataset::intercept_only(vec![y.0, y.1], vec![1.0, 1.0]).unwrap();
        let eval = reml_log_likelihood(&data, 1.0).unwrap();
        let expect = -0.5 * 4.0f64.ln() - 0.5 * 1.0f64.ln() - (y.0 - y.1).powi(2) / 8.0;
        assert!((eval.log_lre - expect).abs() < 1e-12);
    }

    #[test]
    fn balanced_intercept_argmax_closed_form() {
        let y = vec![1.0, 3.5, -0.5, 2.0, 4.0, 0.3];
        let d = 0.8;
        let data = FhDataset::intercept_only(y.clone(), vec![d; 6]).unwrap();
        let ybar: f64 = y.iter().sum::<f64>() / 6.0;
        let s2: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / 5.0;
        let closed = (s2 - d).max(0.0);
        // grid search oracle
        let mut best = (0.0, f64::NEG_INFINITY);
        let mut a = 0.0;
        while a < 20.0 {
            let l = reml_log_likelihood(&data, a).unwrap().log_lre;
            if l > best.1 {
                best = (a, l);
            }
            a += 1e-4;
        }
        assert!((best.0 - closed).abs() < 2e-4, "grid {} vs {}", best.0, closed);
    }

    #[test]
    fn k1_matches_finite_difference() {
        let data = random_dataset(10, 3, 42);
        let a = 1.0;
        let (k1, k2, _) = reml_derivatives(&data, a).unwrap();
        let h = 1e-5;
        let kp = reml_log_likelihood(&data, a + h).unwrap().k;
        let km = reml_log_likelihood(&data, a - h).unwrap().k;
        let fd1 = (kp - km) / (2.0 * h);
        assert!((k1 - fd1).abs() < 1e-6 * k1.abs().max(1e-3), "{k1} vs {fd1}");
        let k0 = reml_log_likelihood(&data, a).unwrap().k;
        let fd2 = (kp - 2.0 * k0 + km) / (h * h);
        assert!((k2 - fd2).abs() < 1e-4 * k2.abs().max(1e-2), "{k2} vs {fd2}");
    }

    #[test]
    fn k2_leading_order_shrinks_with_m() {
        // |k2 - trV2/(2m)| is O_p(m^-1/2); average over seeds so the
        // stochastic part does not mask the decay
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, StandardNormal};
        let a = 1.0;
        let mut prev_gap = f64::INFINITY;
        for &m in &[20usize, 80, 320] {
            let mut gap = 0.0;
            let n_seeds = 40;
            for seed in 0..n_seeds {
                // draws consistent with N(0, A + D_i) so the stochastic
                // part of k2 is centered at its model expectation
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(900 + seed);
                let d: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..2.0)).collect();
                let y: Vec<f64> = d
                    .iter()
                    .map(|&di| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (a + di).sqrt() * z
                    })
                    .collect();
                let data = FhDataset::without_covariates(y, d).unwrap();
                let (_, k2, _) = reml_derivatives(&data, a).unwrap();
                let (k2_approx, _) = reml_derivative_approximations(&data, a);
                gap += (k2 - k2_approx).abs() / n_seeds as f64;
            }
            assert!(gap < prev_gap, "m={m}: mean gap {gap} prev {prev_gap}");
            prev_gap = gap;
        }
    }

    #[test]
    fn k3_balanced_analytic_vs_finite_difference() {
        let data = FhDataset::intercept_only(vec![1.0, 2.0, 4.0, 0.5, 3.0], vec![1.2; 5]).unwrap();
        let a = 0.9;
        let (_, _, k3) = reml_derivatives(&data, a).unwrap();
        let h = 1e-4;
        let (_, k2p, _) = reml_derivatives(&data, a + h).unwrap();
        let (_, k2m, _) = reml_derivatives(&data, a - h).unwrap();
        let fd = (k2p - k2m) / (2.0 * h);
        assert!((k3 - fd).abs() < 1e-5 * k3.abs().max(1e-3));
    }

    #[test]
    fn log_lre_tends_to_neg_infinity() {
        let data = random_dataset(9, 2, 11);
        let l1 = reml_log_likelihood(&data, 1e3).unwrap().log_lre;
        let l2 = reml_log_likelihood(&data, 1e6).unwrap().log_lre;
        assert!(l2 < l1);
    }
}

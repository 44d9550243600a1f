//! Point estimators of the variance component A: REML, two ANOVA
//! variants, and the two area-specific adjusted-likelihood estimators
//! (the "N" adjustment and the Yoshimori-Lahiri-style "YL" adjustment).
//!
//! Adjusted estimators maximize log L_RE(A) + log h_i(A) where h_i is a
//! strictly positive adjustment tied to the target area i and nominal
//! level; both adjustments force the maximizer away from zero, so the
//! estimate is always strictly positive.

use crate::dataset::FhDataset;
use crate::error::{FhError, Result};
use crate::model::gls_leverage;
use crate::normal::z_crit;
use crate::quadrature;
use crate::reml::{log_lre_d1, reml_log_likelihood, tr_v2};

/// Variance estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Reml,
    /// Moment estimator without sampling-variance correction:
    /// residual sum of squares over (m - p).
    AnovaLiteral,
    /// Moment estimator with the usual correction, truncated at zero.
    AnovaCorrected,
    /// Adjusted ML targeting area `area`, with the level-dependent
    /// adjustment exponent (1+z^2)/4 on A.
    AdjustedN { area: usize },
    /// Adjusted ML targeting area `area`, with the extra leverage term
    /// in the adjustment.
    AdjustedYl { area: usize },
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Reml => "reml",
            Method::AnovaLiteral => "anova",
            Method::AnovaCorrected => "anova-corrected",
            Method::AdjustedN { .. } => "n",
            Method::AdjustedYl { .. } => "yl",
        }
    }
}

/// Result of fitting the variance component.
#[derive(Debug, Clone)]
pub struct VarianceFit {
    pub method: Method,
    pub alpha: f64,
    pub a_hat: f64,
    /// True when an unrestricted maximizer fell at or below zero and the
    /// estimate was truncated.
    pub truncated: bool,
    /// Maximized (possibly adjusted) log-likelihood, up to a constant.
    pub objective: f64,
}

/// log h_i(A) for the "N" adjustment.
pub fn log_h_n(a: f64, d_i: f64, z: f64) -> f64 {
    0.25 * (1.0 + z * z) * a.ln() + 0.25 * (7.0 - z * z) * (a + d_i).ln()
}

/// d/dA log h_i(A) for the "N" adjustment.
pub fn log_h_n_d1(a: f64, d_i: f64, z: f64) -> f64 {
    2.0 / (a + d_i) + (1.0 + z * z) * d_i / (4.0 * a * (a + d_i))
}

/// d/dA log h_i(A) for the "YL" adjustment: the "N" slope plus the
/// leverage term r_i(A) tr[V^-2]/2.
pub fn log_h_yl_d1(data: &FhDataset, area: usize, a: f64, z: f64) -> Result<f64> {
    let d_i = data.d()[area];
    let lev = if data.p() == 0 {
        0.0
    } else {
        gls_leverage(data, a, area)? * tr_v2(data, a) / 2.0
    };
    Ok(log_h_n_d1(a, d_i, z) + lev)
}

/// log h_i(A) for the "YL" adjustment, integrating the leverage term
/// from zero.
pub fn log_h_yl(data: &FhDataset, area: usize, a: f64, z: f64) -> Result<f64> {
    let d_i = data.d()[area];
    let base = log_h_n(a, d_i, z);
    if data.p() == 0 || a == 0.0 {
        return Ok(base);
    }
    let extra = quadrature::adaptive(0.0, a, 1e-10, &mut |s| {
        gls_leverage(data, s, area).unwrap_or(0.0) * tr_v2(data, s) / 2.0
    })?;
    Ok(base + extra)
}

/// Upper end of the search range for A.
fn a_ceiling(data: &FhDataset) -> f64 {
    let m = data.m() as f64;
    let yy: f64 = data.y().iter().map(|y| y * y).sum();
    let dmax = data.d().iter().cloned().fold(0.0f64, f64::max);
    (10.0 * yy / m).max(100.0 * dmax).max(1.0)
}

fn bisect<F: FnMut(f64) -> Result<f64>>(
    mut lo: f64,
    mut hi: f64,
    mut f_lo: f64,
    mut f: F,
) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Stationary points of a derivative `psi` on a geometric grid over
/// (a_lo, a_hi], refined by bisection.
fn stationary_points<F: FnMut(f64) -> Result<f64>>(
    a_lo: f64,
    a_hi: f64,
    n_grid: usize,
    mut psi: F,
) -> Result<Vec<f64>> {
    let ratio = (a_hi / a_lo).powf(1.0 / (n_grid as f64 - 1.0));
    let mut roots = Vec::new();
    let mut prev_a = a_lo;
    let mut prev_f = psi(a_lo)?;
    for k in 1..n_grid {
        let a = a_lo * ratio.powi(k as i32);
        let f = psi(a)?;
        if prev_f == 0.0 {
            roots.push(prev_a);
        } else if (prev_f > 0.0) != (f > 0.0) {
            roots.push(bisect(prev_a, a, prev_f, &mut psi)?);
        }
        prev_a = a;
        prev_f = f;
    }
    if prev_f == 0.0 {
        roots.push(prev_a);
    }
    Ok(roots)
}

/// Fit the variance component by the requested method.
pub fn estimate_variance(data: &FhDataset, method: Method, alpha: f64) -> Result<VarianceFit> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(FhError::InvalidData(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if let Method::AdjustedN { area } | Method::AdjustedYl { area } = method {
        if area >= data.m() {
            return Err(FhError::InvalidData(format!(
                "target area {area} out of range for m={}",
                data.m()
            )));
        }
    }
    let z = z_crit(alpha);
    match method {
        Method::AnovaLiteral | Method::AnovaCorrected => anova(data, method, alpha),
        Method::Reml => {
            let a_hi = a_ceiling(data);
            let roots = stationary_points(1e-10, a_hi, 80, |a| log_lre_d1(data, a))?;
            let mut best = (0.0, reml_log_likelihood(data, 0.0)?.log_lre);
            for r in roots {
                let l = reml_log_likelihood(data, r)?.log_lre;
                if l > best.1 {
                    best = (r, l);
                }
            }
            // a root within bracketing resolution of zero is a truncation
            let truncated = best.0 < 1e-9;
            let a_hat = if truncated { 0.0 } else { best.0 };
            Ok(VarianceFit {
                method,
                alpha,
                a_hat,
                truncated,
                objective: best.1,
            })
        }
        Method::AdjustedN { area } | Method::AdjustedYl { area } => {
            let d_i = data.d()[area];
            let mut a_hi = a_ceiling(data);
            let psi = |data: &FhDataset, a: f64| -> Result<f64> {
                let adj = match method {
                    Method::AdjustedN { .. } => log_h_n_d1(a, d_i, z),
                    _ => log_h_yl_d1(data, area, a, z)?,
                };
                Ok(log_lre_d1(data, a)? + adj)
            };
            // For large A the adjusted slope behaves like
            // (2 + m q_i/2 - (m-p)/2)/A, where q_i is the target area's
            // OLS leverage for the YL adjustment and 0 for the N one.
            // A non-negative tail coefficient means the adjusted
            // likelihood keeps climbing forever; there is no interior
            // maximizer and we cap the estimate at the search ceiling,
            // where the resulting interval is essentially the direct one.
            let q_ols = match method {
                Method::AdjustedYl { .. } if data.p() > 0 => {
                    let ones = vec![1.0; data.m()];
                    let fit =
                        crate::linalg::weighted_least_squares(data.x(), data.y(), &ones, data.p())?;
                    crate::linalg::inv_quad_form(&fit.r, data.x_row(area), data.p())
                }
                _ => 0.0,
            };
            let m = data.m() as f64;
            let tail_coef = 2.0 + 0.5 * m * q_ols - 0.5 * (m - data.p() as f64);
            // psi -> +inf as A -> 0+, so any sign change gives a root;
            // widen the window if the slope is still positive at the top.
            let mut roots = Vec::new();
            let expansions = if tail_coef < 0.0 { 8 } else { 1 };
            for _ in 0..expansions {
                roots = stationary_points(1e-12 * a_hi.max(1.0), a_hi, 120, |a| {
                    psi(data, a)
                })?;
                if !roots.is_empty() {
                    break;
                }
                a_hi *= 100.0;
            }
            if roots.is_empty() {
                if tail_coef >= 0.0 {
                    let a_hat = a_ceiling(data);
                    let objective = reml_log_likelihood(data, a_hat)?.log_lre
                        + match method {
                            Method::AdjustedN { .. } => log_h_n(a_hat, d_i, z),
                            _ => log_h_yl(data, area, a_hat, z)?,
                        };
                    return Ok(VarianceFit {
                        method,
                        alpha,
                        a_hat,
                        truncated: false,
                        objective,
                    });
                }
                return Err(FhError::NonConvergence {
                    context: format!("{} adjusted likelihood has no stationary point", method.label()),
                    lo: 0.0,
                    hi: a_hi,
                    last: f64::NAN,
                });
            }
            let mut best: Option<(f64, f64)> = None;
            for r in roots {
                let obj = reml_log_likelihood(data, r)?.log_lre
                    + match method {
                        Method::AdjustedN { .. } => log_h_n(r, d_i, z),
                        _ => log_h_yl(data, area, r, z)?,
                    };
                if best.map_or(true, |(_, b)| obj > b) {
                    best = Some((r, obj));
                }
            }
            let (a_hat, objective) = best.unwrap();
            Ok(VarianceFit {
                method,
                alpha,
                a_hat,
                truncated: false,
                objective,
            })
        }
    }
}

fn anova(data: &FhDataset, method: Method, alpha: f64) -> Result<VarianceFit> {
    let m = data.m();
    let p = data.p();
    if m <= p {
        return Err(FhError::InvalidData(
            "moment estimator needs m > p".to_string(),
        ));
    }
    let (rss, correction) = if p == 0 {
        let rss: f64 = data.y().iter().map(|y| y * y).sum();
        let corr: f64 = data.d().iter().sum();
        (rss, corr)
    } else {
        let beta = data.ols_beta()?;
        let mut rss = 0.0;
        for i in 0..m {
            let fitted: f64 = data
                .x_row(i)
                .iter()
                .zip(&beta)
                .map(|(x, b)| x * b)
                .sum();
            rss += (data.y()[i] - fitted).powi(2);
        }
        let mut corr = 0.0;
        for i in 0..m {
            corr += (1.0 - data.ols_leverage(i)?) * data.d()[i];
        }
        (rss, corr)
    };
    let denom = (m - p) as f64;
    let (a_hat, truncated) = match method {
        Method::AnovaLiteral => (rss / denom, false),
        _ => {
            let raw = (rss - correction) / denom;
            ((raw).max(0.0), raw < 0.0)
        }
    };
    Ok(VarianceFit {
        method,
        alpha,
        a_hat,
        truncated,
        objective: f64::NAN,
    })
}

//! Closed-form per-area quantities of the two-level model: shrinkage,
//! BLUP, prediction-variance components and leverage.

use crate::dataset::FhDataset;
use crate::error::{FhError, Result};
use crate::linalg;

/// Per-area quantities at a candidate variance A.
#[derive(Debug, Clone, Copy)]
pub struct AreaQuantities {
    pub area: usize,
    pub a: f64,
    /// Shrinkage B_i = D_i/(A+D_i).
    pub b: f64,
    /// g1 = A D_i / (A + D_i).
    pub g1: f64,
    /// g2 = B_i^2 r_i.
    pub g2: f64,
    /// sigma_i = sqrt(g1).
    pub sigma: f64,
    /// delta_i = sqrt(g1 + g2).
    pub delta: f64,
    /// GLS leverage r_i = x_i'(X'V^-1 X)^-1 x_i; zero when p = 0.
    pub r: f64,
    /// OLS leverage q_i = x_i'(X'X)^-1 x_i; zero when p = 0.
    pub q: f64,
}

#[derive(Debug, Clone)]
pub struct BlupResult {
    pub beta_gls: Vec<f64>,
    pub theta_blup: Vec<f64>,
    pub areas: Vec<AreaQuantities>,
}

/// GLS fit at a fixed A, reused across the likelihood and prior code.
pub struct GlsFit {
    pub beta: Vec<f64>,
    /// Upper-triangular factor with X'V^-1 X = R'R; empty when p = 0.
    pub r_factor: Vec<f64>,
    /// Residuals y - X beta (y itself when p = 0).
    pub resid: Vec<f64>,
}

impl GlsFit {
    pub fn synthetic(&self, data: &FhDataset, i: usize) -> f64 {
        data.x_row(i)
            .iter()
            .zip(&self.beta)
            .map(|(x, b)| x * b)
            .sum()
    }
}

/// Weighted least squares with weights 1/(A+D_i). Requires p >= 1.
pub fn gls_fit(data: &FhDataset, a: f64) -> Result<GlsFit> {
    if data.p() == 0 {
        return Ok(GlsFit {
            beta: Vec::new(),
            r_factor: Vec::new(),
            resid: data.y().to_vec(),
        });
    }
    check_a(a)?;
    let w: Vec<f64> = data.d().iter().map(|&di| 1.0 / (a + di)).collect();
    let fit = linalg::weighted_least_squares(data.x(), data.y(), &w, data.p())?;
    Ok(GlsFit {
        beta: fit.beta,
        r_factor: fit.r,
        resid: fit.resid,
    })
}

/// GLS coefficient vector (X'V^-1 X)^-1 X'V^-1 y.
pub fn gls_beta(data: &FhDataset, a: f64) -> Result<Vec<f64>> {
    if data.p() == 0 {
        return Err(FhError::InvalidData(
            "gls_beta requires at least one covariate (p >= 1)".into(),
        ));
    }
    Ok(gls_fit(data, a)?.beta)
}

/// GLS leverage r_i = x_i'(X'V^-1 X)^-1 x_i at a given A.
pub fn gls_leverage(data: &FhDataset, a: f64, i: usize) -> Result<f64> {
    if data.p() == 0 {
        return Ok(0.0);
    }
    let fit = gls_fit(data, a)?;
    Ok(linalg::inv_quad_form(&fit.r_factor, data.x_row(i), data.p()))
}

pub fn area_quantities(data: &FhDataset, a: f64, i: usize) -> Result<AreaQuantities> {
    let fit = gls_fit(data, a)?;
    area_quantities_with_fit(data, a, i, &fit)
}

/// Variant that reuses an existing GLS fit at the same A.
pub fn area_quantities_with_fit(
    data: &FhDataset,
    a: f64,
    i: usize,
    fit: &GlsFit,
) -> Result<AreaQuantities> {
    check_a(a)?;
    let p = data.p();
    let di = data.d()[i];
    let b = di / (a + di);
    let g1 = a * di / (a + di);
    let r = if p == 0 {
        0.0
    } else {
        linalg::inv_quad_form(&fit.r_factor, data.x_row(i), p)
    };
    let g2 = b * b * r;
    let q = data.ols_leverage(i)?;
    Ok(AreaQuantities {
        area: i,
        a,
        b,
        g1,
        g2,
        sigma: g1.sqrt(),
        delta: (g1 + g2).sqrt(),
        r,
        q,
    })
}

/// BLUP of all areas at a fixed A: theta_i = (1-B_i) y_i + B_i x_i'beta.
/// For p = 0 this is the best predictor (1-B_i) y_i.
pub fn blup(data: &FhDataset, a: f64) -> Result<BlupResult> {
    let fit = gls_fit(data, a)?;
    let m = data.m();
    let mut theta = Vec::with_capacity(m);
    let mut areas = Vec::with_capacity(m);
    for i in 0..m {
        let aq = area_quantities_with_fit(data, a, i, &fit)?;
        let synth = if data.p() == 0 {
            0.0
        } else {
            fit.synthetic(data, i)
        };
        theta.push((1.0 - aq.b) * data.y()[i] + aq.b * synth);
        areas.push(aq);
    }
    Ok(BlupResult {
        beta_gls: fit.beta,
        theta_blup: theta,
        areas,
    })
}

/// BLUP center for a single area given an existing fit.
pub fn blup_center(data: &FhDataset, i: usize, b: f64, fit: &GlsFit) -> f64 {
    let synth = if data.p() == 0 {
        0.0
    } else {
        fit.synthetic(data, i)
    };
    (1.0 - b) * data.y()[i] + b * synth
}

fn check_a(a: f64) -> Result<()> {
    if !a.is_finite() || a < 0.0 {
        return Err(FhError::InvalidData(format!(
            "variance A = {a} must be finite and >= 0"
        )));
    }
    Ok(())
}

use crate::error::{FhError, Result};

/// Area-level data of the two-level normal model: direct estimates `y`,
/// known sampling variances `d`, and an m x p covariate matrix.
///
/// `p = 0` encodes the no-covariate (common mean zero) model; the
/// covariate block is then genuinely empty and GLS is skipped entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct FhDataset {
    y: Vec<f64>,
    d: Vec<f64>,
    /// Row-major m x p covariate matrix; empty when p = 0.
    x: Vec<f64>,
    p: usize,
}

impl FhDataset {
    pub fn new(y: Vec<f64>, d: Vec<f64>, x: Vec<f64>, p: usize) -> Result<Self> {
        let m = y.len();
        if m == 0 {
            return Err(FhError::InvalidData("no areas".into()));
        }
        if d.len() != m {
            return Err(FhError::InvalidData(format!(
                "y has {} areas but D has {}",
                m,
                d.len()
            )));
        }
        if x.len() != m * p {
            return Err(FhError::InvalidData(format!(
                "covariate block has {} entries, expected {}x{}",
                x.len(),
                m,
                p
            )));
        }
        if p >= 1 && m <= p {
            return Err(FhError::InvalidData(format!("m = {m} must exceed p = {p}")));
        }
        for (i, &di) in d.iter().enumerate() {
            if !di.is_finite() || di <= 0.0 {
                return Err(FhError::InvalidData(format!(
                    "D[{i}] = {di} must be finite and > 0"
                )));
            }
        }
        for (i, &yi) in y.iter().enumerate() {
            if !yi.is_finite() {
                return Err(FhError::InvalidData(format!("y[{i}] = {yi} is not finite")));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FhError::InvalidData("non-finite covariate entry".into()));
        }
        let data = Self { y, d, x, p };
        if p >= 1 {
            // rank check doubles as the regularity condition on X
            data.ols_r_matrix()?;
        }
        Ok(data)
    }

    /// No-covariate model (p = 0).
    pub fn without_covariates(y: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        Self::new(y, d, Vec::new(), 0)
    }

    /// Intercept-only model (p = 1, X a column of ones).
    pub fn intercept_only(y: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        let m = y.len();
        Self::new(y, d, vec![1.0; m], 1)
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// All sampling variances equal (the balanced case).
    pub fn is_balanced(&self) -> bool {
        self.d.iter().all(|&di| di == self.d[0])
    }

    /// OLS leverage q_i = x_i'(X'X)^{-1}x_i; zero when p = 0.
    pub fn ols_leverage(&self, i: usize) -> Result<f64> {
        if self.p == 0 {
            return Ok(0.0);
        }
        let r = self.ols_r_matrix()?;
        let z = crate::linalg::solve_lower_transposed(&r, self.x_row(i), self.p);
        Ok(z.iter().map(|v| v * v).sum())
    }

    /// OLS coefficients (X'X)^{-1}X'y.
    pub fn ols_beta(&self) -> Result<Vec<f64>> {
        if self.p == 0 {
            return Ok(Vec::new());
        }
        let w = vec![1.0; self.m()];
        crate::linalg::weighted_least_squares(&self.x, &self.y, &w, self.p).map(|fit| fit.beta)
    }

    fn ols_r_matrix(&self) -> Result<Vec<f64>> {
        let w = vec![1.0; self.m()];
        crate::linalg::weighted_least_squares(&self.x, &self.y, &w, self.p).map(|fit| fit.r)
    }
}

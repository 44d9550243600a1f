//! Unnormalized log prior densities for the variance component A:
//! the area-specific matching prior (general, no-covariate and balanced
//! specializations), the DRS baseline, custom tabulated priors, the
//! coverage-defect diagnostic c_i, and a propriety check.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::dataset::FhDataset;
use crate::error::{FhError, Result};
use crate::estimators::{estimate_variance, Method};
use crate::intervals::IntervalMethod;
use crate::model::{area_quantities, gls_fit, gls_leverage};
use crate::normal::z_crit;
use crate::quadrature;
use crate::reml::{reml_log_likelihood, tr_v2, tr_v3};

/// Which prior family a [`PriorSpec`] evaluates.
#[derive(Debug, Clone)]
pub enum PriorKind {
    /// Matching prior for area i, general covariate case:
    /// log trV2 + 2 log(A+D_i) + log A - int_0^A (resid_i(s)/(s+D_i))^2 ds.
    MatchingGeneral { area: usize },
    /// p = 0 closed form: log trV2 + 2 log(A+D_i) + log A + y_i^2/(A+D_i).
    MatchingNoCovariate { area: usize },
    /// Balanced closed form: log A + resid_ols_i^2/(A+D).
    MatchingBalanced { area: usize },
    /// DRS baseline: 2 log(A+D_i) + log trV2.
    Drs { area: usize },
    /// Piecewise-linear log pi over a strictly increasing grid.
    CustomTable { a: Vec<f64>, log_pi: Vec<f64> },
}

/// An evaluable unnormalized prior log-density on A > 0.
pub struct PriorSpec {
    pub kind: PriorKind,
    /// Cumulative values of the MatchingGeneral exponent integral,
    /// keyed by the IEEE bits of A (valid ordering for A > 0).
    integral_cache: Mutex<BTreeMap<u64, f64>>,
}

impl std::fmt::Debug for PriorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PriorSpec").field("kind", &self.kind).finish()
    }
}

impl Clone for PriorSpec {
    fn clone(&self) -> Self {
        PriorSpec {
            kind: self.kind.clone(),
            integral_cache: Mutex::new(self.integral_cache.lock().unwrap().clone()),
        }
    }
}

impl PriorSpec {
    pub fn new(kind: PriorKind) -> Self {
        PriorSpec {
            kind,
            integral_cache: Mutex::new(BTreeMap::new()),
        }
    }

    /// The matching prior in the form appropriate for the dataset:
    /// balanced and no-covariate datasets get their closed forms.
    pub fn matching(data: &FhDataset, area: usize) -> Self {
        let kind = if data.p() == 0 {
            PriorKind::MatchingNoCovariate { area }
        } else if data.is_balanced() {
            PriorKind::MatchingBalanced { area }
        } else {
            PriorKind::MatchingGeneral { area }
        };
        PriorSpec::new(kind)
    }

    pub fn drs(area: usize) -> Self {
        PriorSpec::new(PriorKind::Drs { area })
    }

    pub fn from_table(a: Vec<f64>, log_pi: Vec<f64>) -> Result<Self> {
        if a.len() < 2 || a.len() != log_pi.len() {
            return Err(FhError::InvalidData(
                "custom prior table needs at least two (A, log_pi) rows".to_string(),
            ));
        }
        if a.windows(2).any(|w| w[1] <= w[0]) || a[0] < 0.0 {
            return Err(FhError::InvalidData(
                "custom prior table needs a strictly increasing non-negative A column"
                    .to_string(),
            ));
        }
        if a.iter().chain(log_pi.iter()).any(|v| !v.is_finite()) {
            return Err(FhError::InvalidData(
                "custom prior table contains non-finite entries".to_string(),
            ));
        }
        Ok(PriorSpec::new(PriorKind::CustomTable { a, log_pi }))
    }

    pub fn area(&self) -> Option<usize> {
        match self.kind {
            PriorKind::MatchingGeneral { area }
            | PriorKind::MatchingNoCovariate { area }
            | PriorKind::MatchingBalanced { area }
            | PriorKind::Drs { area } => Some(area),
            PriorKind::CustomTable { .. } => None,
        }
    }

    /// Unnormalized log pi(A), up to an A-independent constant.
    pub fn log_pi(&self, data: &FhDataset, a: f64) -> Result<f64> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(FhError::InvalidData(format!(
                "prior density needs finite A > 0, got {a}"
            )));
        }
        match &self.kind {
            PriorKind::MatchingGeneral { area } => {
                check_area(data, *area)?;
                if data.p() == 0 {
                    return Err(FhError::InvalidData(
                        "general matching prior needs p >= 1".to_string(),
                    ));
                }
                let d_i = data.d()[*area];
                Ok(tr_v2(data, a).ln() + 2.0 * (a + d_i).ln() + a.ln()
                    - self.exponent_integral(data, *area, a)?)
            }
            PriorKind::MatchingNoCovariate { area } => {
                check_area(data, *area)?;
                if data.p() != 0 {
                    return Err(FhError::InvalidData(
                        "no-covariate matching prior needs p = 0".to_string(),
                    ));
                }
                let d_i = data.d()[*area];
                let y_i = data.y()[*area];
                Ok(tr_v2(data, a).ln()
                    + 2.0 * (a + d_i).ln()
                    + a.ln()
                    + y_i * y_i / (a + d_i))
            }
            PriorKind::MatchingBalanced { area } => {
                check_area(data, *area)?;
                if !data.is_balanced() || data.p() == 0 {
                    return Err(FhError::InvalidData(
                        "balanced matching prior needs balanced data with p >= 1".to_string(),
                    ));
                }
                let d = data.d()[*area];
                let r = ols_resid(data, *area)?;
                Ok(a.ln() + r * r / (a + d))
            }
            PriorKind::Drs { area } => {
                check_area(data, *area)?;
                let d_i = data.d()[*area];
                Ok(2.0 * (a + d_i).ln() + tr_v2(data, a).ln())
            }
            PriorKind::CustomTable { a: grid, log_pi } => {
                Ok(interp_linear(grid, log_pi, a))
            }
        }
    }

    /// rho_1(A) = d/dA log pi(A); analytic for every built-in kind.
    pub fn rho1(&self, data: &FhDataset, a: f64) -> Result<f64> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(FhError::InvalidData(format!(
                "rho1 needs finite A > 0, got {a}"
            )));
        }
        let trv_ratio = |a: f64| -2.0 * tr_v3(data, a) / tr_v2(data, a);
        match &self.kind {
            PriorKind::MatchingGeneral { area } => {
                let d_i = data.d()[*area];
                let fit = gls_fit(data, a)?;
                let u = fit.resid[*area] / (a + d_i);
                Ok(trv_ratio(a) + 2.0 / (a + d_i) + 1.0 / a - u * u)
            }
            PriorKind::MatchingNoCovariate { area } => {
                let d_i = data.d()[*area];
                let u = data.y()[*area] / (a + d_i);
                Ok(trv_ratio(a) + 2.0 / (a + d_i) + 1.0 / a - u * u)
            }
            PriorKind::MatchingBalanced { area } => {
                let d = data.d()[*area];
                let u = ols_resid(data, *area)? / (a + d);
                Ok(1.0 / a - u * u)
            }
            PriorKind::Drs { area } => {
                let d_i = data.d()[*area];
                Ok(trv_ratio(a) + 2.0 / (a + d_i))
            }
            PriorKind::CustomTable { a: grid, log_pi } => {
                Ok(interp_slope(grid, log_pi, a))
            }
        }
    }

    /// int_0^A (resid_i(s)/(s+D_i))^2 ds, accumulated incrementally from
    /// the nearest cached lower endpoint.
    fn exponent_integral(&self, data: &FhDataset, area: usize, a: f64) -> Result<f64> {
        let d_i = data.d()[area];
        let mut integrand = |s: f64| -> f64 {
            match gls_fit(data, s) {
                Ok(fit) => (fit.resid[area] / (s + d_i)).powi(2),
                Err(_) => f64::NAN,
            }
        };
        let mut cache = self.integral_cache.lock().unwrap();
        let (lo, base) = cache
            .range(..=a.to_bits())
            .next_back()
            .map(|(k, v)| (f64::from_bits(*k), *v))
            .unwrap_or((0.0, 0.0));
        if lo == a {
            return Ok(base);
        }
        let inc = quadrature::adaptive(lo, a, 1e-10, &mut integrand)?;
        if !inc.is_finite() {
            return Err(FhError::Integration {
                lo,
                hi: a,
                reason: "matching-prior exponent integrand not finite".to_string(),
            });
        }
        let val = base + inc;
        cache.insert(a.to_bits(), val);
        Ok(val)
    }
}

fn check_area(data: &FhDataset, area: usize) -> Result<()> {
    if area >= data.m() {
        return Err(FhError::InvalidData(format!(
            "area {area} out of range for m={}",
            data.m()
        )));
    }
    Ok(())
}

fn ols_resid(data: &FhDataset, area: usize) -> Result<f64> {
    let beta = data.ols_beta()?;
    let fitted: f64 = data
        .x_row(area)
        .iter()
        .zip(&beta)
        .map(|(x, b)| x * b)
        .sum();
    Ok(data.y()[area] - fitted)
}

fn interp_linear(grid: &[f64], vals: &[f64], a: f64) -> f64 {
    let n = grid.len();
    if a <= grid[0] {
        // extrapolate with the first segment's slope
        return vals[0] + interp_slope(grid, vals, grid[0]) * (a - grid[0]);
    }
    if a >= grid[n - 1] {
        return vals[n - 1] + interp_slope(grid, vals, grid[n - 1]) * (a - grid[n - 1]);
    }
    let j = grid.partition_point(|&g| g <= a).min(n - 1);
    let (a0, a1) = (grid[j - 1], grid[j]);
    let t = (a - a0) / (a1 - a0);
    vals[j - 1] * (1.0 - t) + vals[j] * t
}

fn interp_slope(grid: &[f64], vals: &[f64], a: f64) -> f64 {
    let n = grid.len();
    let j = grid.partition_point(|&g| g <= a).clamp(1, n - 1);
    (vals[j] - vals[j - 1]) / (grid[j] - grid[j - 1])
}

/// Posterior-coverage defect c_i of Theorem 1 (or its YL variant),
/// evaluated at the REML estimate.
pub fn coverage_defect_ci(
    data: &FhDataset,
    area: usize,
    prior: &PriorSpec,
    alpha: f64,
    method: IntervalMethod,
) -> Result<f64> {
    check_area(data, area)?;
    if !matches!(method, IntervalMethod::N | IntervalMethod::Yl) {
        return Err(FhError::InvalidData(
            "the coverage defect is defined for the N and YL branches only".to_string(),
        ));
    }
    let reml = estimate_variance(data, Method::Reml, alpha)?;
    if reml.truncated || reml.a_hat <= 0.0 {
        return Err(FhError::TruncatedAtZero(
            "coverage defect undefined: REML estimate truncated at zero".to_string(),
        ));
    }
    let a = reml.a_hat;
    let z = z_crit(alpha);
    let d_i = data.d()[area];
    let q = area_quantities(data, a, area)?;
    let b = q.b;
    let trv2 = tr_v2(data, a);
    let trv3 = tr_v3(data, a);
    let fit = gls_fit(data, a)?;
    let u = fit.resid[area] / (a + d_i);

    let l1_n = 2.0 / (a + d_i) + (1.0 + z * z) * d_i / (4.0 * a * (a + d_i));
    let (l1, extra) = match method {
        IntervalMethod::Yl => {
            let lev = if data.p() == 0 {
                0.0
            } else {
                gls_leverage(data, a, area)?
            };
            (l1_n + trv2 * lev / 2.0, -z * b * lev / a)
        }
        _ => (l1_n, 0.0),
    };
    let rho1 = prior.rho1(data, a)?;
    let bracket = l1
        - 0.5 * ((b / 2.0 - 2.0) / a + 4.0 * trv3 / trv2)
        - rho1
        - u * u
        - z * z * b / (4.0 * a);
    Ok(2.0 * z * b / (a * trv2) * bracket + extra)
}

/// Outcome of the propriety diagnostic for matching priors.
#[derive(Debug, Clone)]
pub struct ProprietyReport {
    /// Theorem's sufficient condition m > p + 4.
    pub condition_holds: bool,
    /// Whether pi(A) L_RE(A) A^{(m-p)/2 - 1} stayed bounded over the
    /// tail grid.
    pub grid_bounded: bool,
    /// Estimated tail exponent of the unnormalized posterior; a proper
    /// posterior shows roughly 1 - (m-p)/2 < -1.
    pub tail_exponent: f64,
}

impl ProprietyReport {
    pub fn proper(&self) -> bool {
        self.condition_holds && self.grid_bounded
    }
}

/// Numerical propriety check on a geometric tail grid
/// A in [1e2, 1e8] x max(D).
pub fn check_propriety(
    data: &FhDataset,
    prior: &PriorSpec,
) -> Result<ProprietyReport> {
    if !matches!(
        prior.kind,
        PriorKind::MatchingGeneral { .. }
            | PriorKind::MatchingNoCovariate { .. }
            | PriorKind::MatchingBalanced { .. }
    ) {
        return Err(FhError::InvalidData(
            "propriety check covers the matching-prior kinds only".to_string(),
        ));
    }
    let m = data.m() as f64;
    let p = data.p() as f64;
    let condition_holds = data.m() > data.p() + 4;
    let dmax = data.d().iter().cloned().fold(0.0f64, f64::max);
    let power = (m - p) / 2.0 - 1.0;
    let mut logs = Vec::new();
    let n_pts = 25;
    for k in 0..n_pts {
        let a = dmax * 1e2 * 1e6f64.powf(k as f64 / (n_pts as f64 - 1.0));
        let g = prior.log_pi(data, a)?
            + reml_log_likelihood(data, a)?.log_lre
            + power * a.ln();
        logs.push((a, g));
    }
    let first = logs[0].1;
    let grid_bounded = logs.iter().all(|&(_, g)| g <= first + 1.0);
    // raw tail slope of log posterior vs log A over the last decade
    let (a1, g1) = logs[logs.len() - 5];
    let (a2, g2) = logs[logs.len() - 1];
    let tail_exponent =
        (g2 - power * a2.ln() - (g1 - power * a1.ln())) / (a2.ln() - a1.ln());
    Ok(ProprietyReport {
        condition_holds,
        grid_bounded,
        tail_exponent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn random_dataset(m: usize, p: usize, seed: u64) -> FhDataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::with_capacity(m);
        let mut d = Vec::with_capacity(m);
        let mut x = Vec::with_capacity(m * p);
        for _ in 0..m {
            let mut mean = 0.0;
            for j in 0..p {
                let xv = if j == 0 {
                    1.0
                } else {
                    StandardNormal.sample(&mut rng)
                };
                x.push(xv);
                mean += xv * (j as f64 + 0.5);
            }
            let di: f64 = rng.gen_range(0.1..0.8);
            let theta = mean + { let z: f64 = StandardNormal.sample(&mut rng); z };
            y.push(theta + di.sqrt() * { let z: f64 = StandardNormal.sample(&mut rng); z });
            d.push(di);
        }
        FhDataset::new(y, d, x, p).unwrap()
    }

    #[test]
    fn general_matches_balanced_up_to_constant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m = 8;
        let y: Vec<f64> = (0..m)
            .map(|_| 1.0 + 2.0 * { let z: f64 = StandardNormal.sample(&mut rng); z })
            .collect();
        let data = FhDataset::intercept_only(y, vec![0.5; m]).unwrap();
        let general = PriorSpec::new(PriorKind::MatchingGeneral { area: 2 });
        let balanced = PriorSpec::new(PriorKind::MatchingBalanced { area: 2 });
        let a_grid: Vec<f64> = (1..=20).map(|k| 0.25 * k as f64).collect();
        let offset = general.log_pi(&data, a_grid[0]).unwrap()
            - balanced.log_pi(&data, a_grid[0]).unwrap();
        for &a in &a_grid[1..] {
            let g = general.log_pi(&data, a).unwrap();
            let b = balanced.log_pi(&data, a).unwrap() + offset;
            assert!((g - b).abs() < 1e-6, "A={a}: {g} vs {b}");
        }
    }

    #[test]
    fn nocov_term_by_term() {
        // m=5, all D=1, y_2=2, A=1:
        // log pi = log trV2 + 2 log(A+D) + log A + y^2/(A+D)
        //        = log(5/4) + 2 log 2 + 0 + 2
        let data =
            FhDataset::without_covariates(vec![0.0, 0.0, 2.0, 0.0, 0.0], vec![1.0; 5]).unwrap();
        let prior = PriorSpec::new(PriorKind::MatchingNoCovariate { area: 2 });
        let got = prior.log_pi(&data, 1.0).unwrap();
        let expect = (5.0f64 / 4.0).ln() + 2.0 * 2.0f64.ln() + 2.0;
        assert!((got - expect).abs() < 1e-12);

        // y_i = 0 drops the exponent term
        let prior0 = PriorSpec::new(PriorKind::MatchingNoCovariate { area: 0 });
        let got0 = prior0.log_pi(&data, 1.0).unwrap();
        assert!((got0 - ((5.0f64 / 4.0).ln() + 2.0 * 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn rho1_matches_finite_difference() {
        let data = random_dataset(9, 2, 13);
        let priors = vec![
            PriorSpec::new(PriorKind::MatchingGeneral { area: 3 }),
            PriorSpec::new(PriorKind::Drs { area: 3 }),
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for prior in &priors {
            for _ in 0..20 {
                let a = rng.gen_range(0.05f64..5.0);
                let h = (1e-5f64).max(1e-5 * a);
                let fp = prior.log_pi(&data, a + h).unwrap();
                let fm = prior.log_pi(&data, a - h).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let an = prior.rho1(&data, a).unwrap();
                assert!(
                    (fd - an).abs() <= 1e-4 * an.abs().max(1.0),
                    "{:?} A={a}: fd {fd} vs analytic {an}",
                    prior.kind
                );
            }
        }
    }

    #[test]
    fn general_exponent_monotone_nonincreasing() {
        let data = random_dataset(10, 2, 17);
        let prior = PriorSpec::new(PriorKind::MatchingGeneral { area: 1 });
        let d_i = data.d()[1];
        let mut prev = f64::INFINITY;
        for k in 1..=15 {
            let a = 0.3 * k as f64;
            // subtract the closed-form part to isolate -integral
            let v = prior.log_pi(&data, a).unwrap()
                - (tr_v2(&data, a).ln() + 2.0 * (a + d_i).ln() + a.ln());
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn drs_constant_in_balanced_case() {
        let data = FhDataset::intercept_only(vec![1.0, 2.0, 0.5, 3.0], vec![0.7; 4]).unwrap();
        let prior = PriorSpec::drs(1);
        let v1 = prior.log_pi(&data, 0.2).unwrap();
        let v2 = prior.log_pi(&data, 5.0).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn matching_prior_zeroes_the_defect() {
        for seed in 0..10 {
            let m = if seed % 2 == 0 { 15 } else { 30 };
            let data = random_dataset(m, 3, 100 + seed);
            let area = (seed as usize * 3) % m;
            let prior = PriorSpec::matching(&data, area);
            for method in [IntervalMethod::N, IntervalMethod::Yl] {
                match coverage_defect_ci(&data, area, &prior, 0.05, method) {
                    Ok(c) => assert!(c.abs() < 1e-8, "seed {seed} {method:?}: c={c}"),
                    Err(FhError::TruncatedAtZero(_)) => {}
                    Err(e) => panic!("seed {seed}: {e}"),
                }
            }
        }
    }

    #[test]
    fn drs_prior_leaves_nonzero_defect() {
        let data = random_dataset(15, 2, 4);
        let prior = PriorSpec::drs(0);
        let c = coverage_defect_ci(&data, 0, &prior, 0.05, IntervalMethod::N).unwrap();
        assert!(c.abs() > 1e-6, "unexpectedly small defect {c}");
    }

    #[test]
    fn defect_branches_agree_under_matching_prior() {
        let data = random_dataset(20, 2, 8);
        let prior = PriorSpec::matching(&data, 5);
        let cn = coverage_defect_ci(&data, 5, &prior, 0.05, IntervalMethod::N).unwrap();
        let cyl = coverage_defect_ci(&data, 5, &prior, 0.05, IntervalMethod::Yl).unwrap();
        assert!((cn - cyl).abs() < 1e-10, "{cn} vs {cyl}");
    }

    #[test]
    fn propriety_condition_and_grid() {
        // m = p + 5 satisfies the sufficient condition
        for p in [0usize, 1, 3] {
            let m = p + 5;
            let data = random_dataset(m, p, 60 + p as u64);
            let prior = PriorSpec::matching(&data, 0);
            let rep = check_propriety(&data, &prior).unwrap();
            assert!(rep.condition_holds, "p={p}");
            assert!(rep.grid_bounded, "p={p}");
            assert!(rep.tail_exponent < -1.0 + 0.2, "p={p}: {}", rep.tail_exponent);
        }
        // m = p + 3 fails the condition; no impropriety claim
        let data = random_dataset(5, 2, 70);
        let prior = PriorSpec::matching(&data, 0);
        let rep = check_propriety(&data, &prior).unwrap();
        assert!(!rep.condition_holds);
    }

    #[test]
    fn custom_table_interpolates_and_extrapolates() {
        let prior =
            PriorSpec::from_table(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0]).unwrap();
        let data = FhDataset::intercept_only(vec![1.0, 2.0, 3.0], vec![1.0; 3]).unwrap();
        assert!((prior.log_pi(&data, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((prior.log_pi(&data, 1.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((prior.log_pi(&data, 3.0).unwrap() - (-1.0)).abs() < 1e-12);
        assert!((prior.rho1(&data, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(PriorSpec::from_table(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
    }
}

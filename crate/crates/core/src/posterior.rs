//! Deterministic posterior engine for the one-dimensional posterior
//! pi_i(A | y) proportional to pi_i(A) L_RE(A), with beta marginalized.
//!
//! Everything is driven off a fixed quadrature grid: posterior coverage
//! of an interval is a weighted sum of conditional-normal probabilities
//! (theta_i | A, y is normal with the BLUP mean and variance delta_i^2),
//! moments come from the law of total variance, and a two-stage sampler
//! (inverse-CDF in A, then the conditional normal) serves as an
//! independent cross-check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::FhDataset;
use crate::error::{FhError, Result};
use crate::intervals::EbInterval;
use crate::linalg;
use crate::model::{area_quantities_with_fit, gls_fit};
use crate::normal::cdf;
use crate::priors::PriorSpec;
use crate::quadrature::{GL8_NODES, GL8_WEIGHTS};

/// Default number of Gauss-Legendre panels (8 points each).
pub const DEFAULT_PANELS: usize = 512;

const TAIL_TOL: f64 = 1e-10;

/// Fixed quadrature grid for one (dataset, area, prior) posterior.
#[derive(Debug, Clone)]
pub struct PosteriorGrid {
    pub area: usize,
    /// Strictly increasing A values in (0, a_hi).
    pub nodes: Vec<f64>,
    /// Normalized probability masses; sum to one.
    pub probs: Vec<f64>,
    /// Log unnormalized posterior at the nodes.
    pub log_post: Vec<f64>,
    /// Log of the normalization integral.
    pub log_norm: f64,
    /// Estimated posterior mass beyond the last node, relative to one.
    pub tail_mass_bound: f64,
    pub a_hi: f64,
    /// Conditional mean of theta_i given A at each node.
    blup: Vec<f64>,
    /// Conditional standard deviation delta_i(A) at each node.
    delta: Vec<f64>,
    g1: Vec<f64>,
}

/// Posterior coverage of one interval.
#[derive(Debug, Clone)]
pub struct CoverageResult {
    pub area: usize,
    pub lower: f64,
    pub upper: f64,
    pub posterior_coverage: f64,
    pub nodes: usize,
    /// Discrepancy against a half-resolution grid; a quadrature error
    /// proxy, not a strict bound.
    pub quadrature_error: f64,
}

struct NodeEval {
    g: f64,
    blup: f64,
    delta: f64,
    g1: f64,
}

/// log pi(A) + log L_RE(A) plus the conditional-normal ingredients,
/// sharing one GLS factorization.
fn eval_node(data: &FhDataset, area: usize, prior: &PriorSpec, a: f64) -> Result<NodeEval> {
    let fit = gls_fit(data, a)?;
    let mut log_det_v = 0.0;
    let mut quad = 0.0;
    for (j, &dj) in data.d().iter().enumerate() {
        let v = a + dj;
        log_det_v += v.ln();
        quad += fit.resid[j] * fit.resid[j] / v;
    }
    let log_det_g = if data.p() == 0 {
        0.0
    } else {
        linalg::log_det_from_r(&fit.r_factor, data.p())
    };
    let log_lre = -0.5 * (log_det_v + log_det_g + quad);
    let q = area_quantities_with_fit(data, a, area, &fit)?;
    Ok(NodeEval {
        g: prior.log_pi(data, a)? + log_lre,
        blup: data.y()[area] - q.b * fit.resid[area],
        delta: q.delta,
        g1: q.g1,
    })
}

/// Build the quadrature grid: locate the posterior mode, pick an upper
/// endpoint where the integrand has dropped at least 60 nats and the
/// power-law tail estimate is below `TAIL_TOL` of the total, then lay
/// panels concentrated around the mode.
pub fn build_posterior_grid(
    data: &FhDataset,
    area: usize,
    prior: &PriorSpec,
    panels: usize,
) -> Result<PosteriorGrid> {
    if area >= data.m() {
        return Err(FhError::InvalidData(format!(
            "area {area} out of range for m={}",
            data.m()
        )));
    }
    if panels < 8 {
        return Err(FhError::Grid("need at least 8 panels".to_string()));
    }
    let g = |a: f64| -> Result<f64> { Ok(eval_node(data, area, prior, a)?.g) };

    // coarse geometric scan for the mode
    let d_scale = data.d().iter().sum::<f64>() / data.m() as f64;
    let yy = data.y().iter().map(|v| v * v).sum::<f64>() / data.m() as f64;
    let scan_lo = 1e-8 * d_scale;
    let scan_hi = 1e4 * (d_scale + yy).max(1.0);
    let n_scan = 200;
    let ratio = (scan_hi / scan_lo).powf(1.0 / (n_scan as f64 - 1.0));
    let mut mode = scan_lo;
    let mut g_mode = f64::NEG_INFINITY;
    let mut prev = scan_lo;
    for k in 0..n_scan {
        let a = scan_lo * ratio.powi(k);
        let ga = g(a)?;
        if ga > g_mode {
            g_mode = ga;
            mode = a;
        }
        prev = a;
    }
    let _ = prev;
    // golden-section refinement around the best scan point
    let (mut lo, mut hi) = (mode / ratio, mode * ratio);
    let inv_phi = 0.618_033_988_749_894_8;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = g(x1)?;
    let mut f2 = g(x2)?;
    for _ in 0..80 {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = g(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = g(x2)?;
        }
        if (hi - lo) < 1e-10 * hi {
            break;
        }
    }
    mode = 0.5 * (lo + hi);
    g_mode = g(mode)?;

    // local curvature -> Laplace scale for the mode window
    let h = (mode * 1e-3).max(1e-9);
    let g_pp = (g(mode + h)? - 2.0 * g_mode + g((mode - h).max(mode * 1e-3))?) / (h * h);
    let sigma = if g_pp < 0.0 {
        (-1.0 / g_pp).sqrt().min(scan_hi)
    } else {
        mode.max(d_scale)
    };

    // upper endpoint: 60-nat drop, then extend until the power-law tail
    // estimate is negligible
    let mut a_hi = (mode + 5.0 * sigma).max(2.0 * mode);
    for _ in 0..400 {
        if g(a_hi)? < g_mode - 60.0 {
            break;
        }
        a_hi *= 2.0;
    }
    let mut tail = f64::INFINITY;
    for _ in 0..120 {
        let g_top = g(a_hi)?;
        let g_in = g(0.7 * a_hi)?;
        let slope = (g_top - g_in) / (1.0f64 / 0.7).ln();
        if slope < -1.05 {
            // integral of c A^slope beyond a_hi, relative to a crude
            // Laplace estimate of the total mass
            let total_est = g_mode.exp() * sigma.max(1e-300) * (2.0 * std::f64::consts::PI).sqrt();
            tail = (g_top.exp() * a_hi / (-slope - 1.0)) / total_est;
            if tail < TAIL_TOL {
                break;
            }
        }
        a_hi *= 4.0;
        if !a_hi.is_finite() {
            return Err(FhError::Grid(
                "posterior tail does not decay; upper endpoint diverged".to_string(),
            ));
        }
    }
    if !(tail < TAIL_TOL) {
        return Err(FhError::Grid(format!(
            "posterior tail bound {tail:.3e} exceeds {TAIL_TOL:.0e} at A_hi={a_hi:.3e}"
        )));
    }

    // panel breakpoints: uniform across the mode window, log-graded
    // toward 0 and toward a_hi
    let w_lo = (mode - 10.0 * sigma).max(0.0);
    let w_hi = (mode + 10.0 * sigma).min(a_hi);
    let mut breaks = Vec::with_capacity(panels + 1);
    let p_left = if w_lo > 0.0 { panels / 4 } else { 0 };
    let p_right = if w_hi < a_hi { panels / 4 } else { 0 };
    let p_mid = panels - p_left - p_right;
    if p_left > 0 {
        // [0, w_lo]: log-spaced down to a factor 1e-8 of the window edge
        breaks.push(0.0);
        let eps = 1e-8f64;
        for k in 0..p_left {
            let t = k as f64 / p_left as f64; // skip t=1, window adds it
            if k > 0 {
                breaks.push(w_lo * eps.powf(1.0 - t));
            } else {
                breaks.push(w_lo * eps);
            }
        }
    } else {
        breaks.push(0.0);
    }
    for k in 0..=p_mid {
        let t = k as f64 / p_mid as f64;
        let v = w_lo + t * (w_hi - w_lo);
        if k == 0 && p_left > 0 {
            breaks.push(w_lo);
        } else if k > 0 || p_left == 0 {
            if v > *breaks.last().unwrap() {
                breaks.push(v);
            }
        }
    }
    if p_right > 0 {
        let r = (a_hi / w_hi).powf(1.0 / p_right as f64);
        for k in 1..=p_right {
            breaks.push(w_hi * r.powi(k as i32));
        }
    }
    // guard: strictly increasing
    breaks.dedup_by(|b, a| *b <= *a);
    *breaks.last_mut().unwrap() = a_hi;

    // evaluate the integrand on every panel's GL8 nodes
    let mut nodes = Vec::new();
    let mut raw_w = Vec::new();
    let mut log_post = Vec::new();
    let mut blup = Vec::new();
    let mut delta = Vec::new();
    let mut g1 = Vec::new();
    for win in breaks.windows(2) {
        let (a, b) = (win[0], win[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (t, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
            let node = mid + half * t;
            let ev = eval_node(data, area, prior, node)?;
            nodes.push(node);
            raw_w.push(w * half);
            log_post.push(ev.g);
            blup.push(ev.blup);
            delta.push(ev.delta);
            g1.push(ev.g1);
        }
    }
    let g_max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut probs: Vec<f64> = log_post
        .iter()
        .zip(&raw_w)
        .map(|(lp, w)| {
            let v = w * (lp - g_max).exp();
            z += v;
            v
        })
        .collect();
    if !(z > 0.0) || !z.is_finite() {
        return Err(FhError::Grid(
            "posterior normalization is zero or non-finite".to_string(),
        ));
    }
    for p in &mut probs {
        *p /= z;
    }
    Ok(PosteriorGrid {
        area,
        nodes,
        probs,
        log_post,
        log_norm: z.ln() + g_max,
        tail_mass_bound: tail,
        a_hi,
        blup,
        delta,
        g1,
    })
}

impl PosteriorGrid {
    /// Posterior mean and variance of A.
    pub fn a_moments(&self) -> (f64, f64) {
        let mean: f64 = self.nodes.iter().zip(&self.probs).map(|(a, p)| a * p).sum();
        let var: f64 = self
            .nodes
            .iter()
            .zip(&self.probs)
            .map(|(a, p)| p * (a - mean) * (a - mean))
            .sum();
        (mean, var)
    }
}

/// Exact posterior coverage of an interval under the grid's posterior.
pub fn posterior_coverage(
    grid: &PosteriorGrid,
    interval: &EbInterval,
) -> Result<CoverageResult> {
    if interval.area != grid.area {
        return Err(FhError::Grid(format!(
            "interval area {} does not match grid area {}",
            interval.area, grid.area
        )));
    }
    let full = coverage_sum(grid, interval.lower, interval.upper, 1);
    let coarse = coverage_sum(grid, interval.lower, interval.upper, 2);
    Ok(CoverageResult {
        area: grid.area,
        lower: interval.lower,
        upper: interval.upper,
        posterior_coverage: full,
        nodes: grid.nodes.len(),
        quadrature_error: (full - coarse).abs(),
    })
}

fn coverage_sum(grid: &PosteriorGrid, lower: f64, upper: f64, stride: usize) -> f64 {
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut k = 0;
    while k < grid.nodes.len() {
        let p = grid.probs[k];
        let cov = if lower == f64::NEG_INFINITY && upper == f64::INFINITY {
            1.0
        } else {
            let d = grid.delta[k].max(1e-300);
            let hi = cdf((upper - grid.blup[k]) / d);
            let lo = cdf((lower - grid.blup[k]) / d);
            hi - lo
        };
        total += p * cov;
        mass += p;
        k += stride;
    }
    total / mass
}

/// (E[A|y], Var[A|y], E[theta_i|y], Var[theta_i|y]) by the law of total
/// variance over the grid.
pub fn posterior_moments(grid: &PosteriorGrid) -> (f64, f64, f64, f64) {
    let (ea, va) = grid.a_moments();
    let et: f64 = grid.blup.iter().zip(&grid.probs).map(|(b, p)| b * p).sum();
    let mut vt = 0.0;
    for k in 0..grid.nodes.len() {
        vt += grid.probs[k] * (grid.delta[k] * grid.delta[k] + (grid.blup[k] - et).powi(2));
    }
    (ea, va, et, vt)
}

/// Posterior mean of g1_i; used by decomposition checks.
pub fn posterior_mean_g1(grid: &PosteriorGrid) -> f64 {
    grid.g1.iter().zip(&grid.probs).map(|(g, p)| g * p).sum()
}

/// Draw (A, theta_i) pairs: A by inverse-CDF interpolation on the grid,
/// theta from the conditional normal.
pub fn sample_posterior(grid: &PosteriorGrid, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Sample from the piecewise-linear density through the node values:
    // segment masses by the trapezoid rule, trapezoid inversion within a
    // segment. This tracks the quadrature moments closely because both
    // discretize the same density on the same nodes.
    let dens: Vec<f64> = grid
        .log_post
        .iter()
        .map(|&lp| (lp - grid.log_norm).exp())
        .collect();
    let k_nodes = grid.nodes.len();
    // segment s spans [edgeered[s], edge[s+1]]; a leading segment covers
    // (0, a_0] with density rising from zero
    let mut edges = Vec::with_capacity(k_nodes + 1);
    edges.push(0.0);
    edges.extend_from_slice(&grid.nodes);
    let edge_dens = |s: usize| if s == 0 { 0.0 } else { dens[s - 1] };
    let mut cdf = Vec::with_capacity(k_nodes);
    let mut acc = 0.0;
    for s in 0..k_nodes {
        acc += 0.5 * (edge_dens(s) + edge_dens(s + 1)) * (edges[s + 1] - edges[s]);
        cdf.push(acc);
    }
    let total = acc;
    let node_val = |vals: &[f64], s: usize| if s == 0 { vals[0] } else { vals[s - 1] };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen_range(0.0..total);
        let s = cdf.partition_point(|&c| c < u).min(k_nodes - 1);
        let c_lo = if s == 0 { 0.0 } else { cdf[s - 1] };
        let v = if cdf[s] > c_lo {
            (u - c_lo) / (cdf[s] - c_lo)
        } else {
            1.0
        };
        let (w0, w1) = (edge_dens(s), edge_dens(s + 1));
        let t = if (w1 - w0).abs() <= 1e-12 * (w0 + w1) {
            v
        } else {
            let disc = (w0 * w0 + (w1 - w0) * (w0 + w1) * v).max(0.0);
            ((disc.sqrt() - w0) / (w1 - w0)).clamp(0.0, 1.0)
        };
        let a = edges[s] + t * (edges[s + 1] - edges[s]);
        let b_lo = node_val(&grid.blup, s);
        let d_lo = node_val(&grid.delta, s);
        let blup = b_lo + t * (grid.blup[s] - b_lo);
        let delta = d_lo + t * (grid.delta[s] - d_lo);
        let znorm: f64 = StandardNormal.sample(&mut rng);
        out.push((a, blup + delta * znorm));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervals::{interval_n, IntervalMethod};
    use crate::priors::PriorSpec;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn toy_dataset(m: usize, seed: u64) -> FhDataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::new();
        let mut d = Vec::new();
        for _ in 0..m {
            let di: f64 = rng.gen_range(0.1..0.6);
            let theta = 1.5 + { let z: f64 = StandardNormal.sample(&mut rng); z };
            y.push(theta + di.sqrt() * { let z: f64 = StandardNormal.sample(&mut rng); z });
            d.push(di);
        }
        FhDataset::intercept_only(y, d).unwrap()
    }

    fn mk_interval(area: usize, lower: f64, upper: f64) -> EbInterval {
        EbInterval {
            area,
            method: IntervalMethod::N,
            center: 0.5 * (lower + upper),
            half_width: 0.5 * (upper - lower),
            lower,
            upper,
            level: 0.95,
            a_used: 1.0,
            beta_used: Vec::new(),
        }
    }

    #[test]
    fn probabilities_normalize() {
        let data = toy_dataset(12, 1);
        let prior = PriorSpec::matching(&data, 3);
        let grid = build_posterior_grid(&data, 3, &prior, 64).unwrap();
        let total: f64 = grid.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(grid.nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(grid.tail_mass_bound < 1e-10);
    }

    #[test]
    fn node_budget_convergence() {
        let data = toy_dataset(15, 2);
        let prior = PriorSpec::matching(&data, 0);
        let g1 = build_posterior_grid(&data, 0, &prior, 256).unwrap();
        let g2 = build_posterior_grid(&data, 0, &prior, 512).unwrap();
        assert!(
            (g1.log_norm - g2.log_norm).abs() < 1e-9,
            "{} vs {}",
            g1.log_norm,
            g2.log_norm
        );
    }

    #[test]
    fn whole_line_interval_has_unit_coverage() {
        let data = toy_dataset(10, 3);
        let prior = PriorSpec::matching(&data, 2);
        let grid = build_posterior_grid(&data, 2, &prior, 64).unwrap();
        let iv = mk_interval(2, f64::NEG_INFINITY, f64::INFINITY);
        let cov = posterior_coverage(&grid, &iv).unwrap();
        assert_eq!(cov.posterior_coverage, 1.0);
    }

    #[test]
    fn coverage_monotone_in_interval() {
        let data = toy_dataset(10, 4);
        let prior = PriorSpec::matching(&data, 1);
        let grid = build_posterior_grid(&data, 1, &prior, 64).unwrap();
        let mut prev = 0.0;
        for w in [0.2, 0.5, 1.0, 2.0, 5.0] {
            let c = posterior_coverage(&grid, &mk_interval(1, 1.0 - w, 1.0 + w))
                .unwrap()
                .posterior_coverage;
            assert!(c >= prev - 1e-14);
            assert!((0.0..=1.0).contains(&c));
            prev = c;
        }
    }

    #[test]
    fn area_mismatch_rejected() {
        let data = toy_dataset(8, 5);
        let prior = PriorSpec::matching(&data, 0);
        let grid = build_posterior_grid(&data, 0, &prior, 32).unwrap();
        assert!(posterior_coverage(&grid, &mk_interval(1, 0.0, 1.0)).is_err());
    }

    #[test]
    fn moments_are_coherent() {
        let data = toy_dataset(12, 6);
        let prior = PriorSpec::matching(&data, 4);
        let grid = build_posterior_grid(&data, 4, &prior, 128).unwrap();
        let (ea, va, _et, vt) = posterior_moments(&grid);
        assert!(ea > 0.0 && ea < grid.a_hi);
        assert!(va >= 0.0);
        assert!(vt >= posterior_mean_g1(&grid) - 1e-12);
    }

    #[test]
    fn tiny_sampling_variance_pins_theta() {
        // D_i ~ 0: theta_i | y concentrates on y_i
        let mut d = vec![0.4; 8];
        d[2] = 1e-8;
        let y = vec![0.3, 1.2, 2.5, -0.1, 0.8, 1.9, 0.2, 1.1];
        let data = FhDataset::intercept_only(y.clone(), d).unwrap();
        let prior = PriorSpec::matching(&data, 2);
        let grid = build_posterior_grid(&data, 2, &prior, 128).unwrap();
        let (_, _, et, vt) = posterior_moments(&grid);
        assert!((et - y[2]).abs() < 1e-4);
        assert!(vt < 1e-6);
    }

    #[test]
    fn sampler_matches_quadrature() {
        let data = toy_dataset(12, 7);
        let area = 5;
        let prior = PriorSpec::matching(&data, area);
        let grid = build_posterior_grid(&data, area, &prior, 128).unwrap();

        // deterministic under the seed
        let s1 = sample_posterior(&grid, 100, 99);
        let s2 = sample_posterior(&grid, 100, 99);
        assert_eq!(s1, s2);

        let n = 200_000;
        let draws = sample_posterior(&grid, n, 2024);
        let (ea, va, et, vt) = posterior_moments(&grid);
        let mean_a: f64 = draws.iter().map(|(a, _)| a).sum::<f64>() / n as f64;
        let mean_t: f64 = draws.iter().map(|(_, t)| t).sum::<f64>() / n as f64;
        assert!((mean_a - ea).abs() < 3.0 * (va / n as f64).sqrt() + 1e-3 * ea);
        assert!((mean_t - et).abs() < 4.0 * (vt / n as f64).sqrt());

        // fraction inside the N interval vs exact quadrature coverage
        let iv = interval_n(&data, area, 0.05).unwrap();
        let cov = posterior_coverage(&grid, &iv).unwrap().posterior_coverage;
        let frac = draws.iter().filter(|(_, t)| iv.contains(*t)).count() as f64 / n as f64;
        let se = (cov * (1.0 - cov) / n as f64).sqrt();
        assert!(
            (frac - cov).abs() < 3.0 * se + 2e-3,
            "frac {frac} vs quadrature {cov}"
        );
    }

    #[test]
    fn flat_prior_reproduces_likelihood_posterior() {
        let data = toy_dataset(10, 8);
        let flat = PriorSpec::from_table(vec![0.0, 1e6], vec![0.0, 0.0]).unwrap();
        let grid = build_posterior_grid(&data, 0, &flat, 128).unwrap();
        // posterior with flat prior is the normalized restricted
        // likelihood: spot-check the ratio at two nodes
        let k1 = grid.nodes.len() / 3;
        let k2 = 2 * grid.nodes.len() / 3;
        let l1 = crate::reml::reml_log_likelihood(&data, grid.nodes[k1])
            .unwrap()
            .log_lre;
        let l2 = crate::reml::reml_log_likelihood(&data, grid.nodes[k2])
            .unwrap()
            .log_lre;
        let got = grid.log_post[k1] - grid.log_post[k2];
        assert!((got - (l1 - l2)).abs() < 1e-10);
    }

    #[test]
    fn sampler_ks_statistic_small() {
        let data = toy_dataset(10, 9);
        let prior = PriorSpec::matching(&data, 3);
        let grid = build_posterior_grid(&data, 3, &prior, 128).unwrap();
        let n = 100_000;
        let mut a_draws: Vec<f64> =
            sample_posterior(&grid, n, 7).into_iter().map(|(a, _)| a).collect();
        a_draws.sort_by(|x, y| x.partial_cmp(y).unwrap());
        // grid CDF interpolated at the draws
        let mut cdf_grid = Vec::with_capacity(grid.probs.len());
        let mut acc = 0.0;
        for p in &grid.probs {
            acc += p;
            cdf_grid.push(acc);
        }
        let mut ks = 0.0f64;
        for (i, &a) in a_draws.iter().enumerate() {
            let k = grid.nodes.partition_point(|&x| x < a);
            let c = if k == 0 { 0.0 } else { cdf_grid[k - 1] };
            let emp = (i + 1) as f64 / n as f64;
            ks = ks.max((emp - c).abs());
        }
        assert!(ks < 1.63 / (n as f64).sqrt() + 1e-2, "KS = {ks}");
    }
}

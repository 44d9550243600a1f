//! Monte Carlo coverage lab: empirical Bayes coverage (EBC), posterior
//! coverage (PC) via the quadrature engine, interval lengths, and the
//! bias/length decay study.
//!
//! Replicates are fully determined by (master seed, replicate index):
//! each replicate runs on its own ChaCha stream, so reports are
//! invariant to execution order and worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

/// Draw a standard normal as `f64`.
fn sample_std<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FhDataset;
use crate::error::{FhError, Result};
use crate::estimators::{estimate_variance, Method};
use crate::intervals::{
    interval_cox, interval_direct, interval_n, interval_yl, CoxVariant, EbInterval,
    IntervalMethod,
};
use crate::io::{arcsine_transform, bundled_baseball};
use crate::model::gls_leverage;
use crate::posterior::{build_posterior_grid, posterior_coverage};
use crate::priors::PriorSpec;

/// Gauss-Legendre panel count used for per-replicate posterior grids;
/// smaller than the standalone default because thousands of grids are
/// built per table cell.
pub const SIM_PANELS: usize = 48;

/// The sampling design of one simulation setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// Two-level normal model; D values cycle through `d_unique` in
    /// consecutive blocks of m / d_unique.len() areas.
    Normal {
        a_true: f64,
        beta: Vec<f64>,
        d_unique: Vec<f64>,
        /// Redraw non-intercept covariates each replicate (the default)
        /// or freeze them across replicates.
        #[serde(default)]
        freeze_x: bool,
    },
    /// Binomial(45, p_i) counts around the bundled baseball truths,
    /// arc-sine transformed, fit without covariates.
    BaseballBinomial,
    /// Normal(theta_i, 1) around the transformed baseball truths,
    /// fit without covariates.
    BaseballNormal,
}

/// A named, reproducible simulation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSetting {
    pub name: String,
    pub m: usize,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    pub design: Design,
}

impl SimSetting {
    /// The named settings: S11/S12 (unbalanced, p=3), S21/S22 (their
    /// no-covariate versions), S31/S32/S33 (balanced, p=3), and the
    /// baseball-mimicking S4/S5.
    pub fn named(name: &str, m: usize, replicates: usize, seed: u64) -> Result<SimSetting> {
        let beta = vec![2.0, -5.0, 8.0];
        let s11_d = vec![0.01, 0.02, 0.1, 0.2, 0.3];
        let s12_d: Vec<f64> = s11_d.iter().map(|d| 5.0 * d).collect();
        let design = match name {
            "S11" => Design::Normal {
                a_true: 1.0,
                beta: beta.clone(),
                d_unique: s11_d,
                freeze_x: false,
            },
            "S12" => Design::Normal {
                a_true: 5.0,
                beta: beta.clone(),
                d_unique: s12_d,
                freeze_x: false,
            },
            "S21" => Design::Normal {
                a_true: 1.0,
                beta: Vec::new(),
                d_unique: s11_d,
                freeze_x: false,
            },
            "S22" => Design::Normal {
                a_true: 5.0,
                beta: Vec::new(),
                d_unique: s12_d,
                freeze_x: false,
            },
            "S31" => Design::Normal {
                a_true: 1.0,
                beta: beta.clone(),
                d_unique: vec![0.1],
                freeze_x: false,
            },
            "S32" => Design::Normal {
                a_true: 5.0,
                beta: beta.clone(),
                d_unique: vec![1.0],
                freeze_x: false,
            },
            "S33" => Design::Normal {
                a_true: 10.0,
                beta,
                d_unique: vec![5.0],
                freeze_x: false,
            },
            "S4" => Design::BaseballBinomial,
            "S5" => Design::BaseballNormal,
            _ => {
                return Err(FhError::InvalidData(format!(
                    "unknown setting name {name:?}"
                )))
            }
        };
        let m = match design {
            Design::BaseballBinomial | Design::BaseballNormal => 18,
            _ => m,
        };
        let setting = SimSetting {
            name: name.to_string(),
            m,
            alpha: 0.05,
            replicates,
            seed,
            design,
        };
        setting.validate()?;
        Ok(setting)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(FhError::InvalidData("alpha must lie in (0,1)".to_string()));
        }
        if self.replicates == 0 {
            return Err(FhError::InvalidData("replicates must be >= 1".to_string()));
        }
        match &self.design {
            Design::Normal {
                a_true, d_unique, ..
            } => {
                if *a_true <= 0.0 || d_unique.is_empty() || d_unique.iter().any(|&d| d <= 0.0) {
                    return Err(FhError::InvalidData(
                        "normal design needs A > 0 and positive D values".to_string(),
                    ));
                }
                if self.m % d_unique.len() != 0 {
                    return Err(FhError::InvalidData(format!(
                        "m = {} is not a multiple of the {} D-groups",
                        self.m,
                        d_unique.len()
                    )));
                }
            }
            _ => {
                if self.m != 18 {
                    return Err(FhError::InvalidData(
                        "baseball designs are fixed at m = 18".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Group label of each area, matching the table layouts: G1-G5 for
    /// grouped D patterns, "All" for balanced designs, player names for
    /// the baseball designs.
    pub fn group_labels(&self) -> Vec<String> {
        match &self.design {
            Design::Normal { d_unique, .. } => {
                if d_unique.len() == 1 {
                    vec!["All".to_string(); self.m]
                } else {
                    let per = self.m / d_unique.len();
                    (0..self.m).map(|i| format!("G{}", i / per + 1)).collect()
                }
            }
            _ => bundled_baseball().into_iter().map(|r| r.player).collect(),
        }
    }

    /// Generate replicate `index` (deterministic in (seed, index)).
    pub fn generate(&self, index: u64) -> Result<Replicate> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(index + 1);
        match &self.design {
            Design::Normal {
                a_true,
                beta,
                d_unique,
                freeze_x,
            } => {
                let p = beta.len();
                let per = self.m / d_unique.len();
                let d: Vec<f64> = (0..self.m).map(|i| d_unique[i / per]).collect();
                let mut x = Vec::with_capacity(self.m * p);
                if p > 0 {
                    let mut xrng = if *freeze_x {
                        let mut r = ChaCha20Rng::seed_from_u64(self.seed);
                        r.set_stream(0);
                        r
                    } else {
                        rng.clone()
                    };
                    for _ in 0..self.m {
                        x.push(1.0);
                        for _ in 1..p {
                            x.push(StandardNormal.sample(&mut xrng));
                        }
                    }
                    if !*freeze_x {
                        // keep theta/noise draws independent of X draws
                        rng = xrng;
                    }
                }
                let mut theta = Vec::with_capacity(self.m);
                let mut y = Vec::with_capacity(self.m);
                for i in 0..self.m {
                    let mean: f64 = if p == 0 {
                        0.0
                    } else {
                        x[i * p..(i + 1) * p]
                            .iter()
                            .zip(beta)
                            .map(|(xv, b)| xv * b)
                            .sum()
                    };
                    let t = mean + a_true.sqrt() * sample_std(&mut rng);
                    y.push(t + d[i].sqrt() * sample_std(&mut rng));
                    theta.push(t);
                }
                Ok(Replicate {
                    data: FhDataset::new(y, d, x, p)?,
                    theta,
                })
            }
            Design::BaseballBinomial | Design::BaseballNormal => {
                let records = bundled_baseball();
                let theta_raw: Vec<f64> = records
                    .iter()
                    .map(|r| arcsine_transform(r.p_true, 45.0))
                    .collect();
                let y_raw: Vec<f64> = match self.design {
                    Design::BaseballBinomial => records
                        .iter()
                        .map(|r| {
                            let bin = Binomial::new(45, r.p_true).expect("valid proportion");
                            arcsine_transform(bin.sample(&mut rng) as f64 / 45.0, 45.0)
                        })
                        .collect(),
                    _ => theta_raw
                        .iter()
                        .map(|t| t + sample_std(&mut rng))
                        .collect(),
                };
                // the no-covariate model needs mean-zero effects: center
                // both y and the target by the replicate's sample mean
                let center = y_raw.iter().sum::<f64>() / y_raw.len() as f64;
                let y: Vec<f64> = y_raw.iter().map(|v| v - center).collect();
                let theta: Vec<f64> = theta_raw.iter().map(|v| v - center).collect();
                let d = vec![1.0; 18];
                Ok(Replicate {
                    data: FhDataset::without_covariates(y, d)?,
                    theta,
                })
            }
        }
    }
}

/// One generated dataset with its true effects.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub data: FhDataset,
    pub theta: Vec<f64>,
}

/// One reporting cell: a D-group crossed with an interval method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub method: String,
    /// Average posterior coverage, percent.
    pub pc: Option<f64>,
    pub pc_se: Option<f64>,
    /// Empirical Bayes coverage, percent.
    pub ebc: Option<f64>,
    pub ebc_se: Option<f64>,
    pub mean_length: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub setting: String,
    pub m: usize,
    pub replicates: usize,
    pub alpha: f64,
    /// Replicates excluded because an estimator or grid failed.
    pub failures: usize,
    pub rows: Vec<ReportRow>,
}

impl SimReport {
    pub fn row(&self, group: &str, method: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.group == group && r.method == method)
    }

    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "setting",
            "group",
            "method",
            "pc",
            "pc_se",
            "ebc",
            "ebc_se",
            "mean_length",
        ])?;
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for r in &self.rows {
            wtr.write_record([
                self.setting.clone(),
                r.group.clone(),
                r.method.clone(),
                fmt(r.pc),
                fmt(r.pc_se),
                fmt(r.ebc),
                fmt(r.ebc_se),
                fmt(r.mean_length),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Per-replicate, per-group aggregates for one method.
struct ReplicateCell {
    hit_rate: f64,
    mean_length: f64,
    mean_pc: Option<f64>,
}

fn build_interval(
    data: &FhDataset,
    area: usize,
    alpha: f64,
    method: IntervalMethod,
) -> Result<EbInterval> {
    match method {
        IntervalMethod::Direct => interval_direct(data, area, alpha),
        IntervalMethod::N => interval_n(data, area, alpha),
        IntervalMethod::Yl => interval_yl(data, area, alpha),
        IntervalMethod::Cox => interval_cox(data, area, alpha, CoxVariant::Literal),
    }
}

/// EBC, lengths and (optionally) quadrature PC for every requested
/// interval method, grouped as in the tables.
pub fn run_coverage(
    setting: &SimSetting,
    methods: &[IntervalMethod],
    compute_pc: bool,
) -> Result<SimReport> {
    setting.validate()?;
    let labels = setting.group_labels();
    let mut groups: Vec<String> = Vec::new();
    for l in &labels {
        if !groups.contains(l) {
            groups.push(l.clone());
        }
    }
    let results: Vec<Result<Vec<Vec<ReplicateCell>>>> = (0..setting.replicates as u64)
        .into_par_iter()
        .map(|idx| replicate_cells(setting, idx, methods, compute_pc, &labels, &groups))
        .collect();

    let mut failures = 0;
    let mut ok: Vec<Vec<Vec<ReplicateCell>>> = Vec::new();
    for r in results {
        match r {
            Ok(cells) => ok.push(cells),
            Err(FhError::NonConvergence { .. })
            | Err(FhError::TruncatedAtZero(_))
            | Err(FhError::Grid(_))
            | Err(FhError::Integration { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if ok.is_empty() {
        return Err(FhError::NonConvergence {
            context: format!("all {} replicates failed", setting.replicates),
            lo: 0.0,
            hi: 0.0,
            last: f64::NAN,
        });
    }
    let mut rows = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        for (mi, method) in methods.iter().enumerate() {
            let hits: Vec<f64> = ok.iter().map(|c| c[mi][gi].hit_rate).collect();
            let lens: Vec<f64> = ok.iter().map(|c| c[mi][gi].mean_length).collect();
            let pcs: Vec<f64> = ok
                .iter()
                .filter_map(|c| c[mi][gi].mean_pc)
                .collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let se = |v: &[f64]| {
                let mu = mean(v);
                (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>()
                    / (v.len() as f64 * (v.len() as f64 - 1.0).max(1.0)))
                .sqrt()
            };
            rows.push(ReportRow {
                group: group.clone(),
                method: method.label().to_string(),
                pc: if pcs.is_empty() {
                    None
                } else {
                    Some(100.0 * mean(&pcs))
                },
                pc_se: if pcs.is_empty() {
                    None
                } else {
                    Some(100.0 * se(&pcs))
                },
                ebc: Some(100.0 * mean(&hits)),
                ebc_se: Some(100.0 * se(&hits)),
                mean_length: Some(mean(&lens)),
            });
        }
    }
    Ok(SimReport {
        setting: setting.name.clone(),
        m: setting.m,
        replicates: setting.replicates,
        alpha: setting.alpha,
        failures,
        rows,
    })
}

fn replicate_cells(
    setting: &SimSetting,
    idx: u64,
    methods: &[IntervalMethod],
    compute_pc: bool,
    labels: &[String],
    groups: &[String],
) -> Result<Vec<Vec<ReplicateCell>>> {
    let rep = setting.generate(idx)?;
    let m = rep.data.m();
    // one posterior grid per area, shared by every method
    let grids = if compute_pc {
        let mut v = Vec::with_capacity(m);
        for i in 0..m {
            let prior = PriorSpec::matching(&rep.data, i);
            v.push(build_posterior_grid(&rep.data, i, &prior, SIM_PANELS)?);
        }
        Some(v)
    } else {
        None
    };
    let mut out = Vec::with_capacity(methods.len());
    for method in methods {
        let mut group_hits = vec![0.0; groups.len()];
        let mut group_lens = vec![0.0; groups.len()];
        let mut group_pc = vec![0.0; groups.len()];
        let mut group_n = vec![0usize; groups.len()];
        for i in 0..m {
            let gi = groups.iter().position(|g| *g == labels[i]).unwrap();
            let iv = build_interval(&rep.data, i, setting.alpha, *method)?;
            group_hits[gi] += f64::from(iv.contains(rep.theta[i]));
            group_lens[gi] += iv.length();
            if let Some(grids) = &grids {
                group_pc[gi] += posterior_coverage(&grids[i], &iv)?.posterior_coverage;
            }
            group_n[gi] += 1;
        }
        let cells: Vec<ReplicateCell> = (0..groups.len())
            .map(|gi| {
                let n = group_n[gi] as f64;
                ReplicateCell {
                    hit_rate: group_hits[gi] / n,
                    mean_length: group_lens[gi] / n,
                    mean_pc: compute_pc.then(|| group_pc[gi] / n),
                }
            })
            .collect();
        out.push(cells);
    }
    Ok(out)
}

pub fn run_eb_coverage(setting: &SimSetting, methods: &[IntervalMethod]) -> Result<SimReport> {
    run_coverage(setting, methods, false)
}

pub fn run_posterior_coverage(
    setting: &SimSetting,
    methods: &[IntervalMethod],
) -> Result<SimReport> {
    run_coverage(setting, methods, true)
}

/// One row of the bias/length decay study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasLengthRow {
    pub m: usize,
    /// mean(A_hat_yl - A_tilde_n) for the target area.
    pub mean_a_gap: f64,
    pub se_a_gap: f64,
    /// mean GLS leverage of the target area at the N estimate.
    pub mean_r: f64,
    pub mean_abs_length_diff: f64,
    pub se_abs_length_diff: f64,
    /// Fraction of replicates where the N interval is the longer one.
    pub frac_n_longer: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasLengthReport {
    pub rows: Vec<BiasLengthRow>,
    /// Fitted log-log slope of mean |length_N - length_YL| in m.
    pub length_slope: f64,
}

/// Bias and length-difference decay across a ladder of m values, using
/// the S11-style design scaled to each m and a fixed target area.
pub fn run_bias_length_study(
    m_list: &[usize],
    replicates: usize,
    seed: u64,
    area: usize,
) -> Result<BiasLengthReport> {
    if m_list.windows(2).any(|w| w[1] <= w[0]) || m_list.is_empty() {
        return Err(FhError::InvalidData(
            "m_list must be non-empty and increasing".to_string(),
        ));
    }
    let mut rows = Vec::new();
    for &m in m_list {
        let setting = SimSetting::named("S11", m, replicates, seed ^ (m as u64) << 20)?;
        let per_rep: Vec<Result<(f64, f64, f64, bool)>> = (0..replicates as u64)
            .into_par_iter()
            .map(|idx| {
                let rep = setting.generate(idx)?;
                let n_fit =
                    estimate_variance(&rep.data, Method::AdjustedN { area }, setting.alpha)?;
                let yl_fit =
                    estimate_variance(&rep.data, Method::AdjustedYl { area }, setting.alpha)?;
                let ivn = interval_n(&rep.data, area, setting.alpha)?;
                let ivyl = interval_yl(&rep.data, area, setting.alpha)?;
                let r = gls_leverage(&rep.data, n_fit.a_hat, area)?;
                Ok((
                    yl_fit.a_hat - n_fit.a_hat,
                    r,
                    ivn.length() - ivyl.length(),
                    ivn.length() > ivyl.length(),
                ))
            })
            .collect();
        let mut gaps = Vec::new();
        let mut rs = Vec::new();
        let mut diffs = Vec::new();
        let mut n_longer = 0usize;
        for r in per_rep {
            let (gap, lev, diff, longer) = r?;
            gaps.push(gap);
            rs.push(lev);
            diffs.push(diff.abs());
            n_longer += usize::from(longer);
        }
        let n = gaps.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let se = |v: &[f64]| {
            let mu = mean(v);
            (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n * (n - 1.0))).sqrt()
        };
        rows.push(BiasLengthRow {
            m,
            mean_a_gap: mean(&gaps),
            se_a_gap: se(&gaps),
            mean_r: mean(&rs),
            mean_abs_length_diff: mean(&diffs),
            se_abs_length_diff: se(&diffs),
            frac_n_longer: n_longer as f64 / n,
        });
    }
    // least-squares slope of ln(mean |diff|) on ln m
    let slope = if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| (r.m as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.mean_abs_length_diff.ln()).collect();
        let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
        let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
        let num: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xbar) * (y - ybar))
            .sum();
        let den: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
        num / den
    } else {
        f64::NAN
    };
    Ok(BiasLengthReport {
        rows,
        length_slope: slope,
    })
}

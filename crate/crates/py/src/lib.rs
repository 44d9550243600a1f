//! Python bindings for the Fay-Herriot interval toolkit.
//!
//! Exposes the dataset type, variance estimators, the EB interval
//! constructors, the matching priors with the coverage-defect
//! diagnostic, and the quadrature posterior engine.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fhmp::error::FhError;
use fhmp::estimators::{estimate_variance, Method};
use fhmp::intervals::{
    interval_cox, interval_direct, interval_n, interval_yl, CoxVariant, EbInterval,
    IntervalMethod,
};
use fhmp::io::{baseball_dataset, bundled_baseball, BaseballModel};
use fhmp::posterior::{
    build_posterior_grid, posterior_coverage, posterior_moments, sample_posterior,
    PosteriorGrid, DEFAULT_PANELS,
};
use fhmp::priors::{check_propriety, coverage_defect_ci, PriorSpec};
use fhmp::sim::{run_coverage, SimSetting};
use fhmp::FhDataset;

fn err(e: FhError) -> PyErr {
    match e {
        FhError::InvalidData(_) | FhError::RankDeficient(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Dataset")]
#[derive(Clone)]
struct PyDataset {
    inner: FhDataset,
}

#[pymethods]
impl PyDataset {
    /// Dataset(y, d, x=None) with x a row-major list of lists.
    #[new]
    #[pyo3(signature = (y, d, x=None))]
    fn new(y: Vec<f64>, d: Vec<f64>, x: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let inner = match x {
            None => FhDataset::without_covariates(y, d).map_err(err)?,
            Some(rows) => {
                let p = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != p) {
                    return Err(PyValueError::new_err("ragged covariate rows"));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                FhDataset::new(y, d, flat, p).map_err(err)?
            }
        };
        Ok(PyDataset { inner })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().to_vec()
    }

    #[getter]
    fn d(&self) -> Vec<f64> {
        self.inner.d().to_vec()
    }

    fn is_balanced(&self) -> bool {
        self.inner.is_balanced()
    }

    /// Fit the variance component; method in
    /// {"reml", "anova", "anova-corrected", "n", "yl"}.
    #[pyo3(signature = (method="reml", alpha=0.05, area=0))]
    fn fit(&self, method: &str, alpha: f64, area: usize) -> PyResult<(f64, bool)> {
        let m = match method {
            "reml" => Method::Reml,
            "anova" => Method::AnovaLiteral,
            "anova-corrected" => Method::AnovaCorrected,
            "n" => Method::AdjustedN { area },
            "yl" => Method::AdjustedYl { area },
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown method {other:?}"
                )))
            }
        };
        let fit = estimate_variance(&self.inner, m, alpha).map_err(err)?;
        Ok((fit.a_hat, fit.truncated))
    }

    /// EB interval for one area; method in {"direct", "cox", "n", "yl"}.
    #[pyo3(signature = (area, method="n", alpha=0.05))]
    fn interval(&self, area: usize, method: &str, alpha: f64) -> PyResult<PyInterval> {
        let iv = match method {
            "direct" => interval_direct(&self.inner, area, alpha),
            "cox" => interval_cox(&self.inner, area, alpha, CoxVariant::Literal),
            "n" => interval_n(&self.inner, area, alpha),
            "yl" => interval_yl(&self.inner, area, alpha),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown interval {other:?}"
                )))
            }
        };
        Ok(PyInterval {
            inner: iv.map_err(err)?,
        })
    }

    /// Coverage defect c_i of the matching (or DRS) prior at the REML
    /// estimate; branch in {"n", "yl"}.
    #[pyo3(signature = (area, prior="matching", branch="n", alpha=0.05))]
    fn coverage_defect(
        &self,
        area: usize,
        prior: &str,
        branch: &str,
        alpha: f64,
    ) -> PyResult<f64> {
        let prior = make_prior(&self.inner, area, prior)?;
        let method = match branch {
            "n" => IntervalMethod::N,
            "yl" => IntervalMethod::Yl,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown branch {other:?}"
                )))
            }
        };
        coverage_defect_ci(&self.inner, area, &prior, alpha, method).map_err(err)
    }

    /// (condition_holds, grid_bounded, tail_exponent) for the matching
    /// prior of one area.
    fn propriety(&self, area: usize) -> PyResult<(bool, bool, f64)> {
        let prior = PriorSpec::matching(&self.inner, area);
        let rep = check_propriety(&self.inner, &prior).map_err(err)?;
        Ok((rep.condition_holds, rep.grid_bounded, rep.tail_exponent))
    }

    /// Quadrature posterior for one area under a prior on A.
    #[pyo3(signature = (area, prior="matching", panels=DEFAULT_PANELS))]
    fn posterior(&self, area: usize, prior: &str, panels: usize) -> PyResult<PyPosterior> {
        let prior = make_prior(&self.inner, area, prior)?;
        let grid = build_posterior_grid(&self.inner, area, &prior, panels).map_err(err)?;
        Ok(PyPosterior { grid })
    }
}

fn make_prior(data: &FhDataset, area: usize, name: &str) -> PyResult<PriorSpec> {
    match name {
        "matching" => Ok(PriorSpec::matching(data, area)),
        "drs" => Ok(PriorSpec::drs(area)),
        other => Err(PyValueError::new_err(format!("unknown prior {other:?}"))),
    }
}

#[pyclass(name = "Interval")]
#[derive(Clone)]
struct PyInterval {
    inner: EbInterval,
}

#[pymethods]
impl PyInterval {
    #[getter]
    fn area(&self) -> usize {
        self.inner.area
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.label()
    }

    #[getter]
    fn center(&self) -> f64 {
        self.inner.center
    }

    #[getter]
    fn lower(&self) -> f64 {
        self.inner.lower
    }

    #[getter]
    fn upper(&self) -> f64 {
        self.inner.upper
    }

    #[getter]
    fn a_used(&self) -> f64 {
        self.inner.a_used
    }

    fn length(&self) -> f64 {
        self.inner.length()
    }

    fn contains(&self, theta: f64) -> bool {
        self.inner.contains(theta)
    }

    fn __repr__(&self) -> String {
        format!(
            "Interval(area={}, method={:?}, lower={:.4}, upper={:.4})",
            self.inner.area,
            self.inner.method.label(),
            self.inner.lower,
            self.inner.upper
        )
    }
}

#[pyclass(name = "Posterior")]
struct PyPosterior {
    grid: PosteriorGrid,
}

#[pymethods]
impl PyPosterior {
    /// Exact posterior coverage of an interval (as returned by
    /// Dataset.interval for the same area).
    fn coverage(&self, interval: &PyInterval) -> PyResult<f64> {
        Ok(posterior_coverage(&self.grid, &interval.inner)
            .map_err(err)?
            .posterior_coverage)
    }

    /// (E[A|y], Var[A|y], E[theta|y], Var[theta|y]).
    fn moments(&self) -> (f64, f64, f64, f64) {
        posterior_moments(&self.grid)
    }

    /// Draw (A, theta) pairs; deterministic under the seed.
    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        sample_posterior(&self.grid, n, seed)
    }

    #[getter]
    fn nodes(&self) -> usize {
        self.grid.nodes.len()
    }
}

/// The bundled 18-player baseball dataset.
/// Returns (Dataset, theta_true, player_names) for model "M3" or "M4".
#[pyfunction]
#[pyo3(signature = (model="M4"))]
fn baseball(model: &str) -> PyResult<(PyDataset, Vec<f64>, Vec<String>)> {
    let records = bundled_baseball();
    let m = match model {
        "M3" => BaseballModel::M3,
        "M4" => BaseballModel::M4,
        other => return Err(PyValueError::new_err(format!("unknown model {other:?}"))),
    };
    let (data, theta) = baseball_dataset(&records, m).map_err(err)?;
    Ok((
        PyDataset { inner: data },
        theta,
        records.into_iter().map(|r| r.player).collect(),
    ))
}

/// Run a named simulation setting; returns report rows as dicts.
#[pyfunction]
#[pyo3(signature = (name, m=15, replicates=200, seed=2023, methods=vec!["n".into(), "yl".into()], pc=false))]
fn simulate(
    py: Python<'_>,
    name: &str,
    m: usize,
    replicates: usize,
    seed: u64,
    methods: Vec<String>,
    pc: bool,
) -> PyResult<Vec<PyObject>> {
    let setting = SimSetting::named(name, m, replicates, seed).map_err(err)?;
    let methods: Vec<IntervalMethod> = methods
        .iter()
        .map(|s| match s.as_str() {
            "direct" => Ok(IntervalMethod::Direct),
            "cox" => Ok(IntervalMethod::Cox),
            "n" => Ok(IntervalMethod::N),
            "yl" => Ok(IntervalMethod::Yl),
            other => Err(PyValueError::new_err(format!(
                "unknown interval {other:?}"
            ))),
        })
        .collect::<PyResult<_>>()?;
    let report = run_coverage(&setting, &methods, pc).map_err(err)?;
    let mut out = Vec::new();
    for row in report.rows {
        let d = pyo3::types::PyDict::new_bound(py);
        d.set_item("group", row.group)?;
        d.set_item("method", row.method)?;
        d.set_item("pc", row.pc)?;
        d.set_item("ebc", row.ebc)?;
        d.set_item("mean_length", row.mean_length)?;
        out.push(d.into());
    }
    Ok(out)
}

#[pymodule]
fn fhmp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyInterval>()?;
    m.add_class::<PyPosterior>()?;
    m.add_function(wrap_pyfunction!(baseball, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

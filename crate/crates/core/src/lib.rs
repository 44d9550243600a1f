//! Interval estimation of random effects in the two-level normal
//! (Fay-Herriot) model.
//!
//! The crate provides:
//! - closed-form per-area quantities of the model (shrinkage, BLUP,
//!   prediction-variance components, leverage) in [`model`];
//! - the restricted log-likelihood of the variance component and its
//!   derivatives in [`reml`];
//! - REML and adjusted-ML point estimators of the variance in
//!   [`estimators`];
//! - empirical Bayes confidence intervals in [`intervals`];
//! - area-specific hyperpriors (matching priors, DRS baseline, custom
//!   tables) and the coverage-defect diagnostic in [`priors`];
//! - a deterministic quadrature posterior engine with exact posterior
//!   coverage and an inverse-CDF sampler in [`posterior`];
//! - a seeded Monte Carlo coverage harness in [`sim`];
//! - dataset/report file formats and the bundled baseball data in [`io`].

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod intervals;
pub mod io;
pub mod model;
pub mod normal;
pub mod posterior;
pub mod priors;
pub mod quadrature;
pub mod reml;
pub mod sim;

mod linalg;

pub use dataset::FhDataset;
pub use error::{FhError, Result};
pub use estimators::{Method, VarianceFit};
pub use intervals::{EbInterval, IntervalMethod};
pub use posterior::{CoverageResult, PosteriorGrid};
pub use priors::PriorSpec;

//! Gibbs sampling for Bayesian P-spline models.
//!
//! Every spline coefficient is drawn from its exact univariate conditional by
//! adaptive rejection sampling, the smoothness hyperparameters by conjugate
//! Gamma steps and the negative binomial overdispersion by Griddy-Gibbs.
//! Three likelihoods are bundled: Poisson counts of a histogram (density
//! estimation), binomial proportions, and negative binomial count series.
//!
//! ```no_run
//! use gsbps::{run_gsbps, GsbpsConfig, HistogramData, ModelSpec};
//!
//! let samples = vec![1.8, 2.1, 3.9, 4.2, 4.4];
//! let hist = HistogramData::from_samples(&samples, 0.5, 1.5, 5.0)?;
//! let chain = run_gsbps(&ModelSpec::Poisson(hist), &GsbpsConfig::default())?;
//! # Ok::<(), gsbps::Error>(())
//! ```

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod ars;
pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod griddy;
pub mod modefind;
pub mod penalty;
pub mod rng;
pub mod targets;

pub use ars::{ars_sample, ArsConfig, HullState};
pub use basis::{design_matrix, eval_basis, make_knots, BasisMatrix, KnotVector};
pub use diagnostics::{density_estimate, fitted_curve, geweke, posterior_summary, FittedCurve, Link, ParamSummary};
pub use error::{Error, Result};
pub use gibbs::{init_state, run_chains, run_gsbps, sample_delta, sample_lambda, Chain, Gibbs, GsbpsConfig};
pub use griddy::{build_grid, griddy_sample, grow_grid, Grid, GriddyConfig};
pub use modefind::{bracket_mode, find_mode, ModeResult};
pub use penalty::{diff_matrix, penalty_matrix, PenaltyModel};
pub use rng::RandomSource;
pub use targets::{
    binom_loglik, negbin_loglik, poisson_loglik, rho_conditional, theta_conditional, BinomialData, ConditionalTarget,
    CountSeriesData, Family, FnTarget, HistogramData, ModelSpec, ModelState,
};

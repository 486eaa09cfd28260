//! Likelihood models and the univariate conditional targets the samplers
//! consume.
//!
//! All three models use a linear predictor `eta_i = theta' b(x_i)`. The
//! conditional log-posterior of one coefficient is
//!
//! ```text
//! phi_k(t) = -0.5 lambda z_k t^2 + lambda psi_k t + l(t; rest)
//! ```
//!
//! and is strictly concave because every per-observation log-likelihood
//! below is concave in `eta`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::BasisMatrix;
use crate::error::{ensure_positive, Error, Result};
use crate::penalty::PenaltyModel;

/// Largest admissible `|eta|`; beyond this `exp` is no longer trustworthy.
pub const PREDICTOR_LIMIT: f64 = 700.0;

/// A univariate log-density known up to an additive constant.
pub trait ConditionalTarget {
    fn logpdf(&self, t: f64) -> f64;
    fn dlogpdf(&self, t: f64) -> f64;
    fn d2logpdf(&self, t: f64) -> f64;
    fn declared_logconcave(&self) -> bool;
}

impl<T: ConditionalTarget + ?Sized> ConditionalTarget for &T {
    fn logpdf(&self, t: f64) -> f64 {
        (**self).logpdf(t)
    }
    fn dlogpdf(&self, t: f64) -> f64 {
        (**self).dlogpdf(t)
    }
    fn d2logpdf(&self, t: f64) -> f64 {
        (**self).d2logpdf(t)
    }
    fn declared_logconcave(&self) -> bool {
        (**self).declared_logconcave()
    }
}

/// Target assembled from closures for the log-density and its derivatives.
pub struct FnTarget<F, G, H> {
    f: F,
    df: G,
    d2f: H,
    log_concave: bool,
}

impl<F, G, H> FnTarget<F, G, H>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    pub fn new(f: F, df: G, d2f: H) -> Self {
        Self {
            f,
            df,
            d2f,
            log_concave: true,
        }
    }

    pub fn not_logconcave(mut self) -> Self {
        self.log_concave = false;
        self
    }
}

impl<F, G, H> ConditionalTarget for FnTarget<F, G, H>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    fn logpdf(&self, t: f64) -> f64 {
        (self.f)(t)
    }
    fn dlogpdf(&self, t: f64) -> f64 {
        (self.df)(t)
    }
    fn d2logpdf(&self, t: f64) -> f64 {
        (self.d2f)(t)
    }
    fn declared_logconcave(&self) -> bool {
        self.log_concave
    }
}

fn fd_step(t: f64) -> f64 {
    1e-6 * t.abs().max(1.0)
}

pub(crate) fn central_first(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t + h) - f(t - h)) / (2.0 * h)
}

pub(crate) fn central_second(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h)
}

// ---------------------------------------------------------------------------
// Data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramData {
    midpoints: Vec<f64>,
    counts: Vec<u64>,
    binwidth: f64,
}

impl HistogramData {
    pub fn new(midpoints: Vec<f64>, counts: Vec<u64>, binwidth: f64) -> Result<Self> {
        if midpoints.is_empty() {
            return Err(Error::InvalidData("histogram has no bins".into()));
        }
        if midpoints.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                expected: midpoints.len(),
                found: counts.len(),
            });
        }
        if !(binwidth > 0.0 && binwidth.is_finite()) {
            return Err(Error::InvalidData(format!(
                "bin width must be positive, got {binwidth}"
            )));
        }
        for (i, w) in midpoints.windows(2).enumerate() {
            if (w[1] - w[0] - binwidth).abs() > 1e-9 * binwidth.max(1.0) {
                return Err(Error::InvalidData(format!(
                    "midpoints {} and {} are not spaced by the bin width {binwidth}",
                    i + 1,
                    i + 2
                )));
            }
        }
        Ok(Self {
            midpoints,
            counts,
            binwidth,
        })
    }

    /// Bins raw samples into equal-width bins over `[lower, upper]`.
    ///
    /// Bins are half-open `[a, b)` except the last, which is closed. The
    /// number of bins is `ceil((upper - lower) / binwidth)` with a small
    /// tolerance so that ranges that are an exact multiple of the width do
    /// not gain a spurious empty bin; `upper` is then moved to the last edge.
    pub fn from_samples(samples: &[f64], binwidth: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(binwidth > 0.0 && binwidth.is_finite()) {
            return Err(Error::InvalidData(format!(
                "bin width must be positive, got {binwidth}"
            )));
        }
        if !(lower < upper) {
            return Err(Error::InvalidDomain { lower, upper });
        }
        let ratio = (upper - lower) / binwidth;
        let bins = ((ratio - 1e-9).ceil() as usize).max(1);
        Self::bin(samples, lower, binwidth, bins)
    }

    /// Bins raw samples into `bins` equal-width bins spanning `[lower, upper]`.
    pub fn from_samples_with_bins(samples: &[f64], bins: usize, lower: f64, upper: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidData("need at least one bin".into()));
        }
        if !(lower < upper) {
            return Err(Error::InvalidDomain { lower, upper });
        }
        Self::bin(samples, lower, (upper - lower) / bins as f64, bins)
    }

    fn bin(samples: &[f64], lower: f64, width: f64, bins: usize) -> Result<Self> {
        let upper = lower + width * bins as f64;
        let mut counts = vec![0u64; bins];
        for (i, &s) in samples.iter().enumerate() {
            if !s.is_finite() || s < lower || s > upper + 1e-12 * upper.abs().max(1.0) {
                return Err(Error::InvalidData(format!(
                    "sample {} = {s} outside the binning range [{lower}, {upper}]",
                    i + 1
                )));
            }
            let idx = (((s - lower) / width).floor() as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let midpoints = (0..bins).map(|i| lower + (i as f64 + 0.5) * width).collect();
        Self::new(midpoints, counts, width)
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn binwidth(&self) -> f64 {
        self.binwidth
    }

    /// Union of the bins.
    pub fn support(&self) -> (f64, f64) {
        let h = 0.5 * self.binwidth;
        (self.midpoints[0] - h, self.midpoints[self.midpoints.len() - 1] + h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinomialData {
    x: Vec<f64>,
    y: Vec<u64>,
    m: Vec<u64>,
}

impl BinomialData {
    pub fn new(x: Vec<f64>, y: Vec<u64>, m: Vec<u64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidData("no observations".into()));
        }
        for len in [y.len(), m.len()] {
            if len != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: x.len(),
                    found: len,
                });
            }
        }
        for i in 0..x.len() {
            if !x[i].is_finite() {
                return Err(Error::InvalidData(format!("row {}: non-finite covariate", i + 1)));
            }
            if m[i] == 0 {
                return Err(Error::InvalidData(format!(
                    "row {}: number of trials must be positive",
                    i + 1
                )));
            }
            if y[i] > m[i] {
                return Err(Error::InvalidData(format!(
                    "row {}: successes {} exceed trials {}",
                    i + 1,
                    y[i],
                    m[i]
                )));
            }
        }
        Ok(Self { x, y, m })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn m(&self) -> &[u64] {
        &self.m
    }

    pub fn support(&self) -> (f64, f64) {
        data_range(&self.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSeriesData {
    x: Vec<f64>,
    y: Vec<u64>,
}

impl CountSeriesData {
    pub fn new(x: Vec<f64>, y: Vec<u64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidData("no observations".into()));
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("row {}: non-finite covariate", i + 1)));
        }
        Ok(Self { x, y })
    }

    /// Series indexed by `x = 1, ..., n`.
    pub fn from_counts(y: Vec<u64>) -> Result<Self> {
        let x = (1..=y.len()).map(|i| i as f64).collect();
        Self::new(x, y)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn support(&self) -> (f64, f64) {
        data_range(&self.x)
    }
}

fn data_range(x: &[f64]) -> (f64, f64) {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Poisson,
    Binomial,
    NegBin,
}

/// One of the bundled likelihood models together with its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Poisson(HistogramData),
    Binomial(BinomialData),
    NegBin(CountSeriesData),
}

impl ModelSpec {
    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Poisson(_) => Family::Poisson,
            ModelSpec::Binomial(_) => Family::Binomial,
            ModelSpec::NegBin(_) => Family::NegBin,
        }
    }

    pub fn covariates(&self) -> &[f64] {
        match self {
            ModelSpec::Poisson(d) => d.midpoints(),
            ModelSpec::Binomial(d) => d.x(),
            ModelSpec::NegBin(d) => d.x(),
        }
    }

    pub fn responses(&self) -> &[u64] {
        match self {
            ModelSpec::Poisson(d) => d.counts(),
            ModelSpec::Binomial(d) => d.y(),
            ModelSpec::NegBin(d) => d.y(),
        }
    }

    /// Trials for the binomial model, `None` otherwise.
    pub fn trials(&self) -> Option<&[u64]> {
        match self {
            ModelSpec::Binomial(d) => Some(d.m()),
            _ => None,
        }
    }

    /// Compact support of the spline basis.
    pub fn support(&self) -> (f64, f64) {
        match self {
            ModelSpec::Poisson(d) => d.support(),
            ModelSpec::Binomial(d) => d.support(),
            ModelSpec::NegBin(d) => d.support(),
        }
    }

    pub fn len(&self) -> usize {
        self.covariates().len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates().is_empty()
    }
}

/// Parameter vector of one Gibbs state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub delta: f64,
    pub rho: Option<f64>,
}

impl ModelState {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("lambda", self.lambda)?;
        ensure_positive("delta", self.delta)?;
        if let Some(rho) = self.rho {
            ensure_positive("rho", rho)?;
        }
        if let Some(t) = self.theta.iter().find(|t| !t.is_finite()) {
            return Err(Error::NumericFailure {
                what: "spline coefficient",
                at: *t,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Per-observation log-likelihood pieces as functions of eta.

/// Numerically stable `log(1 + exp(x))`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Stable logistic function and `s (1 - s)`.
fn logistic_pair(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let q = 1.0 / (1.0 + e);
    let s = if x >= 0.0 { q } else { e * q };
    (s, e * q * q)
}

/// Response data in floating point, shared by every target of a chain.
#[derive(Debug, Clone)]
pub(crate) struct Observations {
    pub family: Family,
    pub y: Vec<f64>,
    pub m: Vec<f64>,
}

impl Observations {
    pub fn new(model: &ModelSpec) -> Self {
        let y = model.responses().iter().map(|&v| v as f64).collect();
        let m = model
            .trials()
            .map(|m| m.iter().map(|&v| v as f64).collect())
            .unwrap_or_default();
        Self {
            family: model.family(),
            y,
            m,
        }
    }

    fn trials(&self, i: usize) -> f64 {
        if self.m.is_empty() {
            0.0
        } else {
            self.m[i]
        }
    }

    /// Log-likelihood of the linear predictor, constants in `theta` dropped.
    /// For the negative binomial the `rho`-dependent terms are kept.
    pub fn loglik(&self, eta: &[f64], rho: f64) -> f64 {
        let ln_rho = rho.ln();
        eta.iter()
            .enumerate()
            .map(|(i, &e)| {
                let y = self.y[i];
                match self.family {
                    Family::Poisson => y * e - e.exp(),
                    Family::Binomial => y * e - self.trials(i) * softplus(e),
                    Family::NegBin => {
                        ln_gamma_ratio(y, rho) + rho * ln_rho + y * e - (y + rho) * (ln_rho + softplus(e - ln_rho))
                    }
                }
            })
            .sum()
    }
}

#[inline]
fn row_value(family: Family, y: f64, m: f64, rho: f64, ln_rho: f64, eta: f64) -> f64 {
    match family {
        Family::Poisson => y * eta - eta.exp(),
        Family::Binomial => y * eta - m * softplus(eta),
        Family::NegBin => y * eta - (y + rho) * (ln_rho + softplus(eta - ln_rho)),
    }
}

/// First and second derivative of the row log-likelihood in `eta`.
#[inline]
fn row_derivs(family: Family, y: f64, m: f64, rho: f64, ln_rho: f64, eta: f64) -> (f64, f64) {
    match family {
        Family::Poisson => {
            let mu = eta.exp();
            (y - mu, -mu)
        }
        Family::Binomial => {
            let (s, v) = logistic_pair(eta);
            (y - m * s, -m * v)
        }
        Family::NegBin => {
            let (s, v) = logistic_pair(eta - ln_rho);
            (y - (y + rho) * s, -(y + rho) * v)
        }
    }
}

fn check_predictor(eta: &[f64]) -> Result<()> {
    match eta.iter().find(|e| !(e.abs() <= PREDICTOR_LIMIT)) {
        Some(&e) => Err(Error::PredictorOverflow(e)),
        None => Ok(()),
    }
}

pub fn poisson_loglik(theta: &[f64], basis: &BasisMatrix, data: &HistogramData) -> Result<f64> {
    check_rows(basis, data.midpoints().len())?;
    let eta = basis.predictor(theta)?;
    check_predictor(&eta)?;
    Ok(Observations::new(&ModelSpec::Poisson(data.clone())).loglik(&eta, f64::NAN))
}

pub fn binom_loglik(theta: &[f64], basis: &BasisMatrix, data: &BinomialData) -> Result<f64> {
    check_rows(basis, data.x().len())?;
    let eta = basis.predictor(theta)?;
    check_predictor(&eta)?;
    Ok(Observations::new(&ModelSpec::Binomial(data.clone())).loglik(&eta, f64::NAN))
}

/// Negative binomial log-likelihood with mean `mu = exp(eta)` and variance
/// `mu + mu^2 / rho`, dropping only the `-log y!` terms.
pub fn negbin_loglik(theta: &[f64], rho: f64, basis: &BasisMatrix, data: &CountSeriesData) -> Result<f64> {
    ensure_positive("rho", rho)?;
    check_rows(basis, data.x().len())?;
    let eta = basis.predictor(theta)?;
    check_predictor(&eta)?;
    Ok(Observations::new(&ModelSpec::NegBin(data.clone())).loglik(&eta, rho))
}

fn check_rows(basis: &BasisMatrix, n: usize) -> Result<()> {
    if basis.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: basis.rows(),
        });
    }
    Ok(())
}

/// Log-likelihood for any bundled model at `state`.
pub fn model_loglik(model: &ModelSpec, basis: &BasisMatrix, state: &ModelState) -> Result<f64> {
    match model {
        ModelSpec::Poisson(d) => poisson_loglik(&state.theta, basis, d),
        ModelSpec::Binomial(d) => binom_loglik(&state.theta, basis, d),
        ModelSpec::NegBin(d) => {
            let rho = state
                .rho
                .ok_or_else(|| Error::InvalidData("negative binomial state without rho".into()))?;
            negbin_loglik(&state.theta, rho, basis, d)
        }
    }
}

/// `ln Gamma(y + rho) - ln Gamma(rho)` for a nonnegative integer `y`,
/// exact as `rho -> 0`.
pub(crate) fn ln_gamma_ratio(y: f64, rho: f64) -> f64 {
    if y < 64.0 {
        (0..y as u64).map(|j| (rho + j as f64).ln()).sum()
    } else {
        ln_gamma(y + rho) - ln_gamma(rho)
    }
}

// ---------------------------------------------------------------------------
// Conditional targets

#[derive(Debug, Clone, Copy)]
struct Row {
    b: f64,
    y: f64,
    m: f64,
    eta_rest: f64,
}

/// Full conditional of one spline coefficient `theta_k`.
#[derive(Debug, Clone)]
pub struct ThetaConditional {
    family: Family,
    rho: f64,
    ln_rho: f64,
    lambda_z: f64,
    lambda_psi: f64,
    rows: Vec<Row>,
}

impl ThetaConditional {
    /// Builds the target from a cached linear predictor `eta = B theta`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_predictor(
        obs: &Observations,
        basis: &BasisMatrix,
        pm: &PenaltyModel,
        eta: &[f64],
        theta: &[f64],
        k: usize,
        lambda: f64,
        rho: f64,
    ) -> Self {
        let theta_k = theta[k];
        let rows = basis
            .column_support(k)
            .iter()
            .map(|&(i, b)| Row {
                b,
                y: obs.y[i],
                m: obs.trials(i),
                eta_rest: eta[i] - theta_k * b,
            })
            .collect();
        Self {
            family: obs.family,
            rho,
            ln_rho: rho.ln(),
            lambda_z: lambda * pm.z(k),
            lambda_psi: lambda * pm.psi(theta, k),
            rows,
        }
    }

    /// `lambda * z_r(k, eps)`, the prior precision of the coefficient.
    pub fn lambda_z(&self) -> f64 {
        self.lambda_z
    }

    pub fn lambda_psi(&self) -> f64 {
        self.lambda_psi
    }

    /// Conditional log-likelihood part of `phi`.
    pub fn loglik(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .map(|r| row_value(self.family, r.y, r.m, self.rho, self.ln_rho, r.eta_rest + t * r.b))
            .sum()
    }

    /// Second derivative of the conditional log-likelihood.
    pub fn loglik_d2(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let (_, d2) = row_derivs(self.family, r.y, r.m, self.rho, self.ln_rho, r.eta_rest + t * r.b);
                d2 * r.b * r.b
            })
            .sum()
    }

    fn loglik_d1(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let (d1, _) = row_derivs(self.family, r.y, r.m, self.rho, self.ln_rho, r.eta_rest + t * r.b);
                d1 * r.b
            })
            .sum()
    }
}

impl ConditionalTarget for ThetaConditional {
    fn logpdf(&self, t: f64) -> f64 {
        -0.5 * self.lambda_z * t * t + self.lambda_psi * t + self.loglik(t)
    }

    fn dlogpdf(&self, t: f64) -> f64 {
        -self.lambda_z * t + self.lambda_psi + self.loglik_d1(t)
    }

    fn d2logpdf(&self, t: f64) -> f64 {
        -self.lambda_z + self.loglik_d2(t)
    }

    fn declared_logconcave(&self) -> bool {
        true
    }
}

/// Conditional target of `theta_k` (0-based `k`) at `state`.
pub fn theta_conditional(
    model: &ModelSpec,
    basis: &BasisMatrix,
    state: &ModelState,
    k: usize,
    pm: &PenaltyModel,
) -> Result<ThetaConditional> {
    state.validate()?;
    if k >= state.theta.len() {
        return Err(Error::InvalidDimension(format!(
            "coefficient index {k} out of range for dimension {}",
            state.theta.len()
        )));
    }
    if pm.dim() != state.theta.len() || basis.cols() != state.theta.len() {
        return Err(Error::DimensionMismatch {
            expected: state.theta.len(),
            found: pm.dim().min(basis.cols()),
        });
    }
    check_rows(basis, model.len())?;
    let rho = match model.family() {
        Family::NegBin => state
            .rho
            .ok_or_else(|| Error::InvalidData("negative binomial state without rho".into()))?,
        _ => f64::NAN,
    };
    let obs = Observations::new(model);
    let eta = basis.predictor(&state.theta)?;
    Ok(ThetaConditional::from_predictor(
        &obs,
        basis,
        pm,
        &eta,
        &state.theta,
        k,
        state.lambda,
        rho,
    ))
}

/// Full conditional of `log(rho)` in the negative binomial model, with the
/// Gamma(a_rho, b_rho) prior on `rho` carried over to the log scale.
#[derive(Debug, Clone)]
pub struct RhoConditional {
    eta: Vec<f64>,
    y: Vec<f64>,
    a_rho: f64,
    b_rho: f64,
}

impl RhoConditional {
    pub(crate) fn from_predictor(obs: &Observations, eta: &[f64], a_rho: f64, b_rho: f64) -> Self {
        Self {
            eta: eta.to_vec(),
            y: obs.y.clone(),
            a_rho,
            b_rho,
        }
    }

    /// Negative binomial log-likelihood at `rho = exp(log_rho)`; `-inf`
    /// where `rho` leaves the normal floating-point range.
    pub fn loglik(&self, log_rho: f64) -> f64 {
        if !(log_rho.abs() <= PREDICTOR_LIMIT) {
            return f64::NEG_INFINITY;
        }
        let rho = log_rho.exp();
        self.eta
            .iter()
            .zip(&self.y)
            .map(|(&e, &y)| ln_gamma_ratio(y, rho) + rho * log_rho + row_value(Family::NegBin, y, 0.0, rho, log_rho, e))
            .sum()
    }

    pub fn log_prior(&self, log_rho: f64) -> f64 {
        self.a_rho * log_rho - self.b_rho * log_rho.exp()
    }
}

impl ConditionalTarget for RhoConditional {
    fn logpdf(&self, log_rho: f64) -> f64 {
        self.loglik(log_rho) + self.log_prior(log_rho)
    }

    fn dlogpdf(&self, t: f64) -> f64 {
        central_first(|s| self.logpdf(s), t, fd_step(t))
    }

    fn d2logpdf(&self, t: f64) -> f64 {
        // Second differences need a larger step than first differences.
        central_second(|s| self.logpdf(s), t, 1e-4 * t.abs().max(1.0))
    }

    fn declared_logconcave(&self) -> bool {
        false
    }
}

pub fn rho_conditional(
    model: &ModelSpec,
    basis: &BasisMatrix,
    state: &ModelState,
    a_rho: f64,
    b_rho: f64,
) -> Result<RhoConditional> {
    if model.family() != Family::NegBin {
        return Err(Error::UnsupportedOperation(
            "the overdispersion conditional exists only for the negative binomial model".into(),
        ));
    }
    ensure_positive("a_rho", a_rho)?;
    ensure_positive("b_rho", b_rho)?;
    check_rows(basis, model.len())?;
    let eta = basis.predictor(&state.theta)?;
    Ok(RhoConditional::from_predictor(
        &Observations::new(model),
        &eta,
        a_rho,
        b_rho,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{design_matrix, make_knots};
    use crate::penalty::penalty_matrix;
    use crate::rng::RandomSource;
    use nalgebra::DMatrix;

    fn ln_factorial(y: u64) -> f64 {
        (1..=y).map(|j| (j as f64).ln()).sum()
    }

    fn setup(family: Family, seed: u64) -> (ModelSpec, BasisMatrix, PenaltyModel, ModelState) {
        let mut rng = RandomSource::new(seed);
        let n = 25;
        let dim = 10;
        let model = match family {
            Family::Poisson => {
                let mids: Vec<f64> = (0..n).map(|i| 0.02 + 0.04 * i as f64).collect();
                let counts = (0..n).map(|_| (rng.uniform() * 20.0) as u64).collect();
                ModelSpec::Poisson(HistogramData::new(mids, counts, 0.04).unwrap())
            }
            Family::Binomial => {
                let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
                let m: Vec<u64> = (0..n).map(|_| 1 + (rng.uniform() * 30.0) as u64).collect();
                let y = m.iter().map(|&mi| (rng.uniform() * (mi + 1) as f64) as u64).collect();
                ModelSpec::Binomial(BinomialData::new(x, y, m).unwrap())
            }
            Family::NegBin => {
                let y = (0..n).map(|_| (rng.uniform() * 40.0) as u64).collect();
                ModelSpec::NegBin(CountSeriesData::from_counts(y).unwrap())
            }
        };
        let (lo, hi) = model.support();
        let kv = make_knots(lo, hi, dim).unwrap();
        let basis = design_matrix(model.covariates(), &kv).unwrap();
        let pm = penalty_matrix(dim, 2, 1e-6).unwrap();
        let theta = (0..dim).map(|_| 2.0 * rng.normal()).collect();
        let state = ModelState {
            theta,
            lambda: 0.1 + 5.0 * rng.uniform(),
            delta: 1.0,
            rho: (family == Family::NegBin).then(|| 0.2 + 10.0 * rng.uniform()),
        };
        (model, basis, pm, state)
    }

    #[test]
    fn poisson_zero_theta() {
        let d = HistogramData::new(vec![0.5, 1.5, 2.5], vec![1, 4, 2], 1.0).unwrap();
        let kv = make_knots(0.0, 3.0, 5).unwrap();
        let b = design_matrix(d.midpoints(), &kv).unwrap();
        assert_eq!(poisson_loglik(&[0.0; 5], &b, &d).unwrap(), -3.0);
    }

    #[test]
    fn poisson_single_term() {
        let d = HistogramData::new(vec![0.0], vec![2], 1.0).unwrap();
        let b = BasisMatrix::from_dense(DMatrix::from_element(1, 1, 1.0));
        for t in [-1.0f64, 0.0, 0.7, 2.0] {
            let l = poisson_loglik(&[t], &b, &d).unwrap();
            assert!((l - (2.0 * t - t.exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn poisson_matches_pmf() {
        let (model, basis, _, state) = setup(Family::Poisson, 1);
        let ModelSpec::Poisson(d) = &model else { unreachable!() };
        let eta = basis.predictor(&state.theta).unwrap();
        let direct: f64 = eta
            .iter()
            .zip(d.counts())
            .map(|(&e, &y)| y as f64 * e - e.exp() - ln_factorial(y))
            .sum();
        let consts: f64 = d.counts().iter().map(|&y| ln_factorial(y)).sum();
        let l = poisson_loglik(&state.theta, &basis, d).unwrap();
        assert!((l - consts - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn binomial_zero_and_saturation() {
        let d = BinomialData::new(vec![0.0, 0.5, 1.0], vec![3, 5, 7], vec![3, 5, 7]).unwrap();
        let kv = make_knots(0.0, 1.0, 4).unwrap();
        let b = design_matrix(d.x(), &kv).unwrap();
        let l0 = binom_loglik(&[0.0; 4], &b, &d).unwrap();
        assert!((l0 + 15.0 * 2f64.ln()).abs() < 1e-12);
        let mut prev = l0;
        for t in [1.0, 5.0, 20.0, 100.0] {
            let l = binom_loglik(&[t; 4], &b, &d).unwrap();
            assert!(l > prev && l <= 0.0);
            prev = l;
        }
        assert!(prev.abs() < 1e-40);
    }

    #[test]
    fn binomial_matches_pmf() {
        let (model, basis, _, state) = setup(Family::Binomial, 2);
        let ModelSpec::Binomial(d) = &model else { unreachable!() };
        let eta = basis.predictor(&state.theta).unwrap();
        let mut direct = 0.0;
        let mut comb = 0.0;
        for i in 0..eta.len() {
            let p = 1.0 / (1.0 + (-eta[i]).exp());
            let (y, m) = (d.y()[i] as f64, d.m()[i] as f64);
            let c = ln_factorial(d.m()[i]) - ln_factorial(d.y()[i]) - ln_factorial(d.m()[i] - d.y()[i]);
            direct += c + y * p.ln() + (m - y) * (1.0 - p).ln();
            comb += c;
        }
        let l = binom_loglik(&state.theta, &basis, d).unwrap();
        assert!((l + comb - direct).abs() < 1e-8 * direct.abs().max(1.0));
    }

    #[test]
    fn negbin_zero_count() {
        let d = CountSeriesData::from_counts(vec![0]).unwrap();
        let b = BasisMatrix::from_dense(DMatrix::from_element(1, 1, 1.0));
        for (t, rho) in [(0.3f64, 2.0f64), (-1.0, 0.5)] {
            let mu = t.exp();
            let expect = rho * rho.ln() - rho * (rho + mu).ln();
            let l = negbin_loglik(&[t], rho, &b, &d).unwrap();
            assert!((l - expect).abs() < 1e-12);
        }
        assert!(negbin_loglik(&[0.0], 0.0, &b, &d).is_err());
    }

    /// NegBin pmf with mean mu and variance mu + mu^2/rho built from the
    /// ratio recursion p(y+1)/p(y) = (y+rho)/(y+1) * mu/(mu+rho).
    fn negbin_pmf_by_recursion(y: u64, mu: f64, rho: f64) -> f64 {
        let mut p = (rho / (rho + mu)).powf(rho);
        for j in 0..y {
            p *= (j as f64 + rho) / (j as f64 + 1.0) * mu / (mu + rho);
        }
        p
    }

    #[test]
    fn negbin_matches_pmf_and_moments() {
        let mut rng = RandomSource::new(9);
        for _ in 0..20 {
            let mu = 0.2 + 6.0 * rng.uniform();
            let rho = 0.3 + 8.0 * rng.uniform();
            // Moments of the recursion pmf agree with the stated mean/variance.
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for y in 0..2000u64 {
                let p = negbin_pmf_by_recursion(y, mu, rho);
                s0 += p;
                s1 += p * y as f64;
                s2 += p * (y * y) as f64;
            }
            assert!((s0 - 1.0).abs() < 1e-10);
            assert!((s1 - mu).abs() < 1e-8);
            assert!((s2 - s1 * s1 - (mu + mu * mu / rho)).abs() < 1e-6);

            let y: Vec<u64> = (0..6).map(|_| (rng.uniform() * 12.0) as u64).collect();
            let d = CountSeriesData::from_counts(y.clone()).unwrap();
            let b = BasisMatrix::from_dense(DMatrix::from_element(6, 1, 1.0));
            let l = negbin_loglik(&[mu.ln()], rho, &b, &d).unwrap();
            let direct: f64 = y
                .iter()
                .map(|&yi| negbin_pmf_by_recursion(yi, mu, rho).ln() + ln_factorial(yi))
                .sum();
            assert!((l - direct).abs() < 1e-9 * direct.abs().max(1.0), "{l} vs {direct}");
        }
    }

    #[test]
    fn negbin_approaches_poisson_gradients() {
        let (model, basis, _, state) = setup(Family::Poisson, 4);
        let ModelSpec::Poisson(h) = &model else { unreachable!() };
        let counts = CountSeriesData::new(h.midpoints().to_vec(), h.counts().to_vec()).unwrap();
        let theta: Vec<f64> = state.theta.iter().map(|t| 0.3 * t).collect();
        for k in 0..theta.len() {
            let h = 1e-5;
            let grad = |f: &dyn Fn(&[f64]) -> f64| {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            };
            let gp = grad(&|t| poisson_loglik(t, &basis, h_ref(&model)).unwrap());
            let gn = grad(&|t| negbin_loglik(t, 1e6, &basis, &counts).unwrap());
            assert!((gp - gn).abs() < 1e-4 * gp.abs().max(1.0), "k={k}: {gp} vs {gn}");
        }

        fn h_ref(m: &ModelSpec) -> &HistogramData {
            match m {
                ModelSpec::Poisson(h) => h,
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn overflow_is_an_error() {
        let d = HistogramData::new(vec![0.0], vec![2], 1.0).unwrap();
        let b = BasisMatrix::from_dense(DMatrix::from_element(1, 1, 1.0));
        assert!(matches!(
            poisson_loglik(&[701.0], &b, &d),
            Err(Error::PredictorOverflow(_))
        ));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for (seed, family) in [(11, Family::Poisson), (12, Family::Binomial), (13, Family::NegBin)] {
            let (model, basis, pm, state) = setup(family, seed);
            let mut rng = RandomSource::new(seed + 100);
            for k in 0..pm.dim() {
                let target = theta_conditional(&model, &basis, &state, k, &pm).unwrap();
                for _ in 0..5 {
                    let t = state.theta[k] + rng.normal();
                    let h = 1e-5;
                    let fd1 = (target.logpdf(t + h) - target.logpdf(t - h)) / (2.0 * h);
                    let fd2 = (target.dlogpdf(t + h) - target.dlogpdf(t - h)) / (2.0 * h);
                    let d1 = target.dlogpdf(t);
                    let d2 = target.d2logpdf(t);
                    assert!((fd1 - d1).abs() <= 1e-5 * d1.abs().max(1.0), "{family:?} d1 {fd1} {d1}");
                    assert!((fd2 - d2).abs() <= 1e-5 * d2.abs().max(1.0), "{family:?} d2 {fd2} {d2}");
                    assert!(d2 < 0.0);
                }
            }
        }
    }

    #[test]
    fn logpdf_decomposes_against_full_loglik() {
        for (seed, family) in [(21, Family::Poisson), (22, Family::Binomial), (23, Family::NegBin)] {
            let (model, basis, pm, state) = setup(family, seed);
            let k = 3;
            let target = theta_conditional(&model, &basis, &state, k, &pm).unwrap();
            let full = |t: f64| {
                let mut s = state.clone();
                s.theta[k] = t;
                model_loglik(&model, &basis, &s).unwrap() - 0.5 * s.lambda * pm.quadratic_form(&s.theta)
            };
            let (a, b) = (state.theta[k] - 0.4, state.theta[k] + 0.9);
            let lhs = target.logpdf(b) - target.logpdf(a);
            let rhs = full(b) - full(a);
            assert!((lhs - rhs).abs() < 1e-9 * rhs.abs().max(1.0), "{family:?}: {lhs} {rhs}");
        }
    }

    #[test]
    fn binomial_curvature_at_zero() {
        let x: Vec<f64> = (0..15).map(|i| i as f64 / 14.0).collect();
        let d = BinomialData::new(x, vec![0; 15], vec![1; 15]).unwrap();
        let model = ModelSpec::Binomial(d.clone());
        let kv = make_knots(0.0, 1.0, 10).unwrap();
        let basis = design_matrix(d.x(), &kv).unwrap();
        let pm = penalty_matrix(10, 2, 1e-6).unwrap();
        let state = ModelState {
            theta: vec![0.0; 10],
            lambda: 1.0,
            delta: 1.0,
            rho: None,
        };
        for k in 0..10 {
            let target = theta_conditional(&model, &basis, &state, k, &pm).unwrap();
            let expect: f64 = -basis.values().column(k).iter().map(|b| b * b / 4.0).sum::<f64>();
            assert!((target.loglik_d2(0.0) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn rho_target_decomposition() {
        let (model, basis, _, state) = setup(Family::NegBin, 31);
        let target = rho_conditional(&model, &basis, &state, 1e-4, 1e-4).unwrap();
        for r in [-2.0f64, 0.0, 0.5, 3.0] {
            let ModelSpec::NegBin(d) = &model else { unreachable!() };
            let nb = negbin_loglik(&state.theta, r.exp(), &basis, d).unwrap();
            let diff = target.logpdf(r) - nb;
            assert!((diff - (1e-4 * r - 1e-4 * r.exp())).abs() < 1e-9 * nb.abs().max(1.0));
            // Derivative self-consistency at two step sizes.
            let g1 = central_first(|s| target.logpdf(s), r, 1e-4);
            let g2 = central_first(|s| target.logpdf(s), r, 1e-3);
            let g = target.dlogpdf(r);
            assert!((g - g1).abs() < 1e-5 * g.abs().max(1.0));
            assert!((g - g2).abs() < 1e-3 * g.abs().max(1.0));
        }
        // Prior gradient a - b exp(0) vanishes at log rho = 0.
        let prior_grad = central_first(|s| target.log_prior(s), 0.0, 1e-6);
        assert!(prior_grad.abs() < 1e-12);
        assert!(!target.declared_logconcave());
    }

    #[test]
    fn gamma_ratio_matches_ln_gamma() {
        for y in [0.0, 1.0, 5.0, 63.0, 64.0, 300.0] {
            for rho in [1e-3, 0.7, 12.0] {
                let direct = ln_gamma(y + rho) - ln_gamma(rho);
                assert!((ln_gamma_ratio(y, rho) - direct).abs() < 1e-9 * direct.abs().max(1.0));
            }
        }
        assert_eq!(ln_gamma_ratio(0.0, 0.0), 0.0);
        assert_eq!(ln_gamma_ratio(2.0, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn rho_target_requires_negbin() {
        let (model, basis, _, state) = setup(Family::Poisson, 41);
        assert!(matches!(
            rho_conditional(&model, &basis, &state, 1e-4, 1e-4),
            Err(Error::UnsupportedOperation(_))
        ));
    }

    #[test]
    fn data_validation() {
        assert!(BinomialData::new(vec![0.0], vec![3], vec![2]).is_err());
        assert!(BinomialData::new(vec![0.0], vec![0], vec![1]).is_ok());
        assert!(HistogramData::new(vec![0.0, 0.3], vec![1, 1], 0.1).is_err());
        assert!(CountSeriesData::new(vec![1.0], vec![1, 2]).is_err());
        let c = CountSeriesData::from_counts(vec![0, 0, 0]).unwrap();
        assert_eq!(c.x(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn binning_half_open_with_closed_last_bin() {
        let h = HistogramData::from_samples(&[0.05, 0.15, 0.15, 0.95], 0.1, 0.0, 1.0).unwrap();
        assert_eq!(h.counts(), &[1, 2, 0, 0, 0, 0, 0, 0, 0, 1]);
        let h = HistogramData::from_samples(&[0.0, 0.1, 1.0], 0.1, 0.0, 1.0).unwrap();
        assert_eq!(h.counts()[0], 1);
        assert_eq!(h.counts()[1], 1);
        assert_eq!(h.counts()[9], 1);
        let h = HistogramData::from_samples_with_bins(&[0.0, 1.0, 2.0], 4, 0.0, 2.0).unwrap();
        assert_eq!(h.counts(), &[1, 0, 1, 1]);
        assert_eq!(h.support(), (0.0, 2.0));
    }
}

//! The Gibbs sampler: conjugate Gamma steps for the smoothness
//! hyperparameters, adaptive rejection steps for the spline coefficients and
//! a Griddy-Gibbs step for the negative binomial overdispersion.

use std::time::{Duration, Instant};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ars::{ars_sample, ArsConfig};
use crate::basis::{design_matrix, make_knots, BasisMatrix, KnotVector};
use crate::error::{ensure_positive, Error, Result};
use crate::griddy::{griddy_draw, GriddyConfig};
use crate::modefind::locate_mode;
use crate::penalty::{penalty_matrix, PenaltyModel, DEFAULT_EPS};
use crate::rng::RandomSource;
use crate::targets::{Family, ModelSpec, ModelState, Observations, RhoConditional, ThetaConditional, PREDICTOR_LIMIT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsbpsConfig {
    /// Number of B-spline basis functions `K`.
    pub dim: usize,
    /// Penalty order `r`.
    pub order: usize,
    pub eps: f64,
    /// Chain length `M`, burn-in included.
    pub iterations: usize,
    pub burnin: usize,
    pub nu: f64,
    pub a_delta: f64,
    pub b_delta: f64,
    pub a_rho: f64,
    pub b_rho: f64,
    pub lambda0: f64,
    pub ars_c: f64,
    pub ars_points: usize,
    pub grid_points: usize,
    pub c_f: f64,
    pub seed: u64,
}

impl Default for GsbpsConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            order: 2,
            eps: DEFAULT_EPS,
            iterations: 15_000,
            burnin: 5_000,
            nu: 2.0,
            a_delta: 1e-4,
            b_delta: 1e-4,
            a_rho: 1e-4,
            b_rho: 1e-4,
            lambda0: 1.0,
            ars_c: 2.0,
            ars_points: 5,
            grid_points: 100,
            c_f: 0.01f64.ln(),
            seed: 0,
        }
    }
}

impl GsbpsConfig {
    /// Defaults for the epidemic-curve model: tighter Gamma(10, 10) prior on
    /// `delta` and shorter chains.
    pub fn negbin_default() -> Self {
        Self {
            iterations: 5_000,
            burnin: 1_000,
            a_delta: 10.0,
            b_delta: 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.order) {
            return Err(Error::UnsupportedOrder(self.order));
        }
        self.validate_sampler()
    }

    /// Checks everything except the basis dimension and penalty order.
    fn validate_sampler(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidDimension("chain length must be positive".into()));
        }
        if self.burnin >= self.iterations {
            return Err(Error::InvalidDimension(format!(
                "burn-in {} must be shorter than the chain length {}",
                self.burnin, self.iterations
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidPerturbation(self.eps));
        }
        for (name, v) in [
            ("nu", self.nu),
            ("a_delta", self.a_delta),
            ("b_delta", self.b_delta),
            ("a_rho", self.a_rho),
            ("b_rho", self.b_rho),
            ("lambda0", self.lambda0),
            ("ars_c", self.ars_c),
        ] {
            ensure_positive(name, v)?;
        }
        if self.ars_points < 2 || self.grid_points < 2 {
            return Err(Error::InvalidDimension("hull and grid sizes must be at least 2".into()));
        }
        if !(self.c_f < 0.0) {
            return Err(Error::InvalidParameter {
                name: "c_f",
                value: self.c_f,
            });
        }
        Ok(())
    }

    fn ars(&self) -> ArsConfig {
        ArsConfig {
            c: self.ars_c,
            init_points: self.ars_points,
            ..ArsConfig::default()
        }
    }

    fn griddy(&self) -> GriddyConfig {
        GriddyConfig {
            points: self.grid_points,
            c_f: self.c_f,
            ..GriddyConfig::default()
        }
    }
}

/// Full chain, burn-in rows included.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chain {
    pub family: Family,
    pub columns: Vec<String>,
    /// One row per iteration: `theta_1..theta_K, lambda, delta[, rho]`.
    pub draws: Vec<Vec<f64>>,
    pub config: GsbpsConfig,
    pub knots: Option<KnotVector>,
    pub logpost_trace: Vec<f64>,
    /// Target evaluations made by the rejection loops, per sweep.
    pub ars_eval_counts: Vec<usize>,
    pub wall_time: Duration,
}

impl Chain {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn burnin(&self) -> usize {
        self.config.burnin.min(self.draws.len())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|r| r[j]).collect()
    }

    pub fn retained_column(&self, j: usize) -> Vec<f64> {
        self.draws[self.burnin()..].iter().map(|r| r[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Post burn-in rows.
    pub fn retained(&self) -> &[Vec<f64>] {
        &self.draws[self.burnin()..]
    }

    /// Post burn-in spline coefficient draws.
    pub fn retained_theta(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let k = self.dim();
        self.retained().iter().map(move |r| &r[..k])
    }

    /// Concatenates the retained rows of several chains into one chain whose
    /// burn-in is zero.
    pub fn pool(chains: &[Chain]) -> Result<Chain> {
        let first = chains
            .first()
            .ok_or_else(|| Error::InvalidData("no chains to pool".into()))?;
        let mut pooled = Chain {
            draws: Vec::new(),
            logpost_trace: Vec::new(),
            ars_eval_counts: Vec::new(),
            wall_time: Duration::ZERO,
            ..first.clone()
        };
        for c in chains {
            if c.columns != first.columns {
                return Err(Error::InvalidData("chains with different parameters".into()));
            }
            let b = c.burnin();
            pooled.draws.extend_from_slice(&c.draws[b..]);
            pooled.logpost_trace.extend_from_slice(&c.logpost_trace[b..]);
            pooled.ars_eval_counts.extend_from_slice(&c.ars_eval_counts[b..]);
            pooled.wall_time = pooled.wall_time.max(c.wall_time);
        }
        pooled.config.iterations = pooled.draws.len();
        pooled.config.burnin = 0;
        Ok(pooled)
    }
}

pub fn delta_posterior(lambda: f64, cfg: &GsbpsConfig) -> (f64, f64) {
    (0.5 * cfg.nu + cfg.a_delta, 0.5 * lambda * cfg.nu + cfg.b_delta)
}

pub fn lambda_posterior(theta: &[f64], pm: &PenaltyModel, delta: f64, cfg: &GsbpsConfig) -> (f64, f64) {
    let k = theta.len() as f64;
    (0.5 * (k + cfg.nu), 0.5 * (pm.quadratic_form(theta) + cfg.nu * delta))
}

pub fn sample_delta(lambda: f64, cfg: &GsbpsConfig, rng: &mut RandomSource) -> Result<f64> {
    ensure_positive("lambda", lambda)?;
    let (shape, rate) = delta_posterior(lambda, cfg);
    rng.gamma(shape, rate)
}

pub fn sample_lambda(
    theta: &[f64],
    pm: &PenaltyModel,
    delta: f64,
    cfg: &GsbpsConfig,
    rng: &mut RandomSource,
) -> Result<f64> {
    ensure_positive("delta", delta)?;
    let (shape, rate) = lambda_posterior(theta, pm, delta, cfg);
    rng.gamma(shape, rate)
}

/// Starting values: penalized least squares on a transformed response for
/// `theta`, `lambda = lambda0`, `delta = a_delta / b_delta`, `rho = 1`.
pub fn init_state(model: &ModelSpec, basis: &BasisMatrix, pm: &PenaltyModel, cfg: &GsbpsConfig) -> Result<ModelState> {
    ensure_positive("lambda0", cfg.lambda0)?;
    let dim = basis.cols();
    if pm.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: pm.dim(),
        });
    }
    let b = basis.values();
    let y: Vec<f64> = model.responses().iter().map(|&v| v as f64).collect();
    let (lhs, rhs) = match model {
        ModelSpec::Poisson(_) | ModelSpec::NegBin(_) => {
            let w = DVector::from_iterator(y.len(), y.iter().map(|v| v + 1.0));
            let z = DVector::from_iterator(y.len(), y.iter().map(|v| (v + 1.0) * (v + 1.0).ln()));
            let bw = DMatrix::from_fn(b.nrows(), dim, |i, k| b[(i, k)] * w[i]);
            (b.transpose() * bw + pm.precision() * cfg.lambda0, b.transpose() * z)
        }
        ModelSpec::Binomial(d) => {
            let z = DVector::from_iterator(
                y.len(),
                y.iter().zip(d.m()).map(|(v, &m)| (v + 1.0) / (m as f64 - v + 1.0)),
            );
            (b.transpose() * b, b.transpose() * z)
        }
    };
    let theta = match lhs.cholesky() {
        Some(ch) => {
            let t: Vec<f64> = ch.solve(&rhs).iter().cloned().collect();
            let eta = basis.predictor(&t)?;
            if t.iter().all(|v| v.is_finite()) && eta.iter().all(|e| e.abs() <= PREDICTOR_LIMIT) {
                t
            } else {
                warn!("initial coefficients are not usable; starting from zero");
                vec![0.0; dim]
            }
        }
        None => {
            warn!("normal equations for the initial coefficients are singular; starting from zero");
            vec![0.0; dim]
        }
    };
    Ok(ModelState {
        theta,
        lambda: cfg.lambda0,
        delta: cfg.a_delta / cfg.b_delta,
        rho: (model.family() == Family::NegBin).then_some(1.0),
    })
}

/// A configured sampler for one model, basis and penalty.
#[derive(Debug, Clone)]
pub struct Gibbs {
    model: ModelSpec,
    obs: Observations,
    basis: BasisMatrix,
    penalty: PenaltyModel,
    knots: Option<KnotVector>,
    cfg: GsbpsConfig,
}

impl Gibbs {
    /// Sampler with an explicit basis and penalty. `cfg.dim` and `cfg.order`
    /// are overwritten by the basis width and penalty order.
    pub fn new(model: ModelSpec, basis: BasisMatrix, penalty: PenaltyModel, mut cfg: GsbpsConfig) -> Result<Self> {
        cfg.dim = basis.cols();
        if penalty.dim() != cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: cfg.dim,
                found: penalty.dim(),
            });
        }
        if basis.rows() != model.len() {
            return Err(Error::DimensionMismatch {
                expected: model.len(),
                found: basis.rows(),
            });
        }
        cfg.eps = penalty.eps();
        cfg.order = penalty.order();
        cfg.validate_sampler()?;
        Ok(Self {
            obs: Observations::new(&model),
            model,
            basis,
            penalty,
            knots: None,
            cfg,
        })
    }

    /// Sampler on the standard cubic basis over the data support.
    pub fn from_config(model: ModelSpec, cfg: GsbpsConfig) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = model.support();
        let kv = make_knots(lo, hi, cfg.dim)?;
        let basis = design_matrix(model.covariates(), &kv)?;
        let penalty = penalty_matrix(cfg.dim, cfg.order, cfg.eps)?;
        let mut g = Self::new(model, basis, penalty, cfg)?;
        g.knots = Some(kv);
        Ok(g)
    }

    pub fn config(&self) -> &GsbpsConfig {
        &self.cfg
    }

    pub fn basis(&self) -> &BasisMatrix {
        &self.basis
    }

    pub fn penalty(&self) -> &PenaltyModel {
        &self.penalty
    }

    pub fn knots(&self) -> Option<&KnotVector> {
        self.knots.as_ref()
    }

    pub fn init_state(&self) -> Result<ModelState> {
        init_state(&self.model, &self.basis, &self.penalty, &self.cfg)
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = (1..=self.cfg.dim).map(|k| format!("theta_{k}")).collect();
        cols.push("lambda".into());
        cols.push("delta".into());
        if self.model.family() == Family::NegBin {
            cols.push("rho".into());
        }
        cols
    }

    /// Runs `cfg.iterations` sweeps from the default starting values.
    pub fn run(&self) -> Result<Chain> {
        let state = self.init_state()?;
        self.run_from(state, self.cfg.seed)
    }

    pub fn run_from(&self, mut state: ModelState, seed: u64) -> Result<Chain> {
        state.validate()?;
        if state.theta.len() != self.cfg.dim {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.dim,
                found: state.theta.len(),
            });
        }
        let started = Instant::now();
        let mut rng = RandomSource::new(seed);
        let mut cfg = self.cfg.clone();
        cfg.seed = seed;
        let n = cfg.iterations;
        let mut draws = Vec::with_capacity(n);
        let mut logpost_trace = Vec::with_capacity(n);
        let mut ars_eval_counts = Vec::with_capacity(n);
        for it in 0..n {
            let (evals, eta) = self.sweep(&mut state, &mut rng, it)?;
            let mut row = state.theta.clone();
            row.push(state.lambda);
            row.push(state.delta);
            if let Some(rho) = state.rho {
                row.push(rho);
            }
            draws.push(row);
            logpost_trace.push(self.log_posterior_at(&state, &eta));
            ars_eval_counts.push(evals);
        }
        Ok(Chain {
            family: self.model.family(),
            columns: self.columns(),
            draws,
            config: cfg,
            knots: self.knots.clone(),
            logpost_trace,
            ars_eval_counts,
            wall_time: started.elapsed(),
        })
    }

    /// One systematic scan: delta, lambda, theta_1..theta_K, then log rho.
    /// Returns the rejection-loop evaluation count and the final predictor.
    fn sweep(&self, state: &mut ModelState, rng: &mut RandomSource, it: usize) -> Result<(usize, Vec<f64>)> {
        let wrap = |coordinate: String, state: &ModelState| {
            let state = Box::new(state.clone());
            move |e: Error| Error::Sampler {
                iteration: it,
                coordinate,
                source: Box::new(e),
                state,
            }
        };
        state.delta = sample_delta(state.lambda, &self.cfg, rng).map_err(wrap("delta".into(), state))?;
        state.lambda = sample_lambda(&state.theta, &self.penalty, state.delta, &self.cfg, rng)
            .map_err(wrap("lambda".into(), state))?;

        // Rebuilt every sweep so that rank-one updates never accumulate drift.
        let mut eta = self.basis.predictor(&state.theta)?;
        let rho = state.rho.unwrap_or(f64::NAN);
        let ars = self.cfg.ars();
        let mut evals = 0;
        for k in 0..self.cfg.dim {
            let draw = self
                .draw_theta(state, &eta, k, rho, &ars, rng)
                .map_err(wrap(format!("theta_{}", k + 1), state))?;
            evals += draw.1;
            let delta = draw.0 - state.theta[k];
            for &(i, b) in self.basis.column_support(k) {
                eta[i] += delta * b;
                if !(eta[i].abs() <= PREDICTOR_LIMIT) {
                    return Err(wrap(format!("theta_{}", k + 1), state)(Error::PredictorOverflow(
                        eta[i],
                    )));
                }
            }
            state.theta[k] = draw.0;
        }
        if self.model.family() == Family::NegBin {
            let target = RhoConditional::from_predictor(&self.obs, &eta, self.cfg.a_rho, self.cfg.b_rho);
            let log_rho = griddy_draw(&target, &self.cfg.griddy(), rng).map_err(wrap("rho".into(), state))?;
            state.rho = Some(log_rho.exp());
            if !(state.rho.unwrap() > 0.0 && state.rho.unwrap().is_finite()) {
                return Err(wrap("rho".into(), state)(Error::NumericFailure {
                    what: "overdispersion",
                    at: log_rho,
                }));
            }
        }
        Ok((evals, eta))
    }

    fn draw_theta(
        &self,
        state: &ModelState,
        eta: &[f64],
        k: usize,
        rho: f64,
        ars: &ArsConfig,
        rng: &mut RandomSource,
    ) -> Result<(f64, usize)> {
        let target = ThetaConditional::from_predictor(
            &self.obs,
            &self.basis,
            &self.penalty,
            eta,
            &state.theta,
            k,
            state.lambda,
            rho,
        );
        let mode = locate_mode(&target, target.lambda_z(), state.theta[k])?;
        ars_sample(&target, &mode, rng, ars)
    }

    /// Unnormalized log posterior including every prior term.
    pub fn log_posterior(&self, state: &ModelState) -> Result<f64> {
        let eta = self.basis.predictor(&state.theta)?;
        Ok(self.log_posterior_at(state, &eta))
    }

    fn log_posterior_at(&self, state: &ModelState, eta: &[f64]) -> f64 {
        let c = &self.cfg;
        let k = state.theta.len() as f64;
        let (l, d) = (state.lambda, state.delta);
        let rho = state.rho.unwrap_or(f64::NAN);
        let mut lp = self.obs.loglik(eta, rho) + 0.5 * k * l.ln() - 0.5 * l * self.penalty.quadratic_form(&state.theta)
            + (0.5 * c.nu - 1.0) * l.ln()
            + 0.5 * c.nu * d.ln()
            - 0.5 * l * c.nu * d
            + (c.a_delta - 1.0) * d.ln()
            - c.b_delta * d;
        if let Some(rho) = state.rho {
            lp += c.a_rho * rho.ln() - c.b_rho * rho;
        }
        lp
    }
}

/// Fits the model on the standard cubic basis over the data support.
pub fn run_gsbps(model: &ModelSpec, cfg: &GsbpsConfig) -> Result<Chain> {
    Gibbs::from_config(model.clone(), cfg.clone())?.run()
}

/// Runs `chains` independent chains in parallel with seeds
/// `cfg.seed, cfg.seed + 1, ...`.
pub fn run_chains(model: &ModelSpec, cfg: &GsbpsConfig, chains: usize) -> Result<Vec<Chain>> {
    let sampler = Gibbs::from_config(model.clone(), cfg.clone())?;
    let state = sampler.init_state()?;
    (0..chains as u64)
        .into_par_iter()
        .map(|i| sampler.run_from(state.clone(), cfg.seed.wrapping_add(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{BinomialData, CountSeriesData, HistogramData};

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    fn tiny_poisson() -> ModelSpec {
        let mids: Vec<f64> = (0..12).map(|i| 0.05 + 0.1 * i as f64).collect();
        let counts = vec![1, 3, 6, 9, 12, 10, 8, 6, 4, 2, 1, 0];
        ModelSpec::Poisson(HistogramData::new(mids, counts, 0.1).unwrap())
    }

    #[test]
    fn delta_parameters_and_mean() {
        let cfg = GsbpsConfig::default();
        assert_eq!(delta_posterior(1.0, &cfg), (0.5 * 2.0 + 1e-4, 0.5 * 1.0 * 2.0 + 1e-4));
        let mut rng = RandomSource::new(1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_delta(1.0, &cfg, &mut rng).unwrap()).collect();
        let (m, _) = mean_var(&xs);
        let (a, b) = delta_posterior(1.0, &cfg);
        assert!((m - a / b).abs() < 3.0 * (a.sqrt() / b) / (n as f64).sqrt());
        let big: Vec<f64> = (0..1000).map(|_| sample_delta(1e6, &cfg, &mut rng).unwrap()).collect();
        assert!(mean_var(&big).0 < 1e-5);
    }

    #[test]
    fn lambda_at_zero_theta() {
        let cfg = GsbpsConfig::default();
        let pm = penalty_matrix(10, 2, 1e-6).unwrap();
        let theta = vec![0.0; 10];
        assert_eq!(lambda_posterior(&theta, &pm, 1.0, &cfg), (6.0, 1.0));
        let mut rng = RandomSource::new(2);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_lambda(&theta, &pm, 1.0, &cfg, &mut rng).unwrap())
            .collect();
        assert!((mean_var(&xs).0 - 6.0).abs() < 3.0 * 6f64.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn lambda_rate_grows_with_roughness() {
        let cfg = GsbpsConfig::default();
        let pm = penalty_matrix(10, 2, 1e-6).unwrap();
        let smooth: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let rough: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (a, b_s) = lambda_posterior(&smooth, &pm, 1.0, &cfg);
        let (_, b_r) = lambda_posterior(&rough, &pm, 1.0, &cfg);
        assert!(a / b_r < a / b_s);
    }

    #[test]
    fn init_zero_counts_gives_zero_theta() {
        let mids: Vec<f64> = (0..8).map(|i| 0.5 + i as f64).collect();
        let model = ModelSpec::Poisson(HistogramData::new(mids, vec![0; 8], 1.0).unwrap());
        let g = Gibbs::from_config(
            model,
            GsbpsConfig {
                dim: 6,
                ..Default::default()
            },
        )
        .unwrap();
        let s = g.init_state().unwrap();
        assert!(s.theta.iter().all(|&t| t == 0.0));
        assert_eq!(s.lambda, 1.0);
        assert_eq!(s.delta, 1.0);
        assert_eq!(s.rho, None);
    }

    #[test]
    fn init_matches_dense_inverse() {
        let model = tiny_poisson();
        let g = Gibbs::from_config(
            model.clone(),
            GsbpsConfig {
                dim: 8,
                ..Default::default()
            },
        )
        .unwrap();
        let s = g.init_state().unwrap();
        let b = g.basis().values();
        let y: Vec<f64> = model.responses().iter().map(|&v| v as f64).collect();
        let mut a = DMatrix::zeros(8, 8);
        let mut r = DVector::zeros(8);
        for i in 0..y.len() {
            for j in 0..8 {
                r[j] += b[(i, j)] * (y[i] + 1.0) * (y[i] + 1.0).ln();
                for k in 0..8 {
                    a[(j, k)] += b[(i, j)] * (y[i] + 1.0) * b[(i, k)];
                }
            }
        }
        a += g.penalty().precision();
        let expect = a.try_inverse().unwrap() * r;
        for k in 0..8 {
            assert!((s.theta[k] - expect[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn binomial_init_uses_odds_ratio_response() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let m = vec![4u64; 10];
        let model = ModelSpec::Binomial(BinomialData::new(x, m.clone(), m).unwrap());
        let g = Gibbs::from_config(
            model,
            GsbpsConfig {
                dim: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let s = g.init_state().unwrap();
        // Constant response 5 is reproduced exactly by a partition of unity.
        for t in s.theta {
            assert!((t - 5.0).abs() < 1e-8);
        }
    }

    #[test]
    fn single_sweep_smoke() {
        let cfg = GsbpsConfig {
            dim: 10,
            iterations: 1,
            burnin: 0,
            ..Default::default()
        };
        let chain = run_gsbps(&tiny_poisson(), &cfg).unwrap();
        assert_eq!(chain.draws.len(), 1);
        assert_eq!(chain.draws[0].len(), 12);
        assert!(chain.draws[0].iter().all(|v| v.is_finite()));
        assert!(chain.draws[0][10] > 0.0 && chain.draws[0][11] > 0.0);
    }

    #[test]
    fn reproducible_and_positive() {
        let cfg = GsbpsConfig {
            dim: 8,
            iterations: 200,
            burnin: 50,
            seed: 9,
            ..Default::default()
        };
        let a = run_gsbps(&tiny_poisson(), &cfg).unwrap();
        let b = run_gsbps(&tiny_poisson(), &cfg).unwrap();
        assert_eq!(a.draws, b.draws);
        assert!(a.draws.iter().all(|r| r[8] > 0.0 && r[9] > 0.0));
        let evals = a.ars_eval_counts[50..].iter().sum::<usize>() as f64 / (150.0 * 8.0);
        assert!(evals < 3.0, "{evals}");
    }

    #[test]
    fn negbin_all_zero_series_runs() {
        let model = ModelSpec::NegBin(CountSeriesData::from_counts(vec![0; 20]).unwrap());
        let cfg = GsbpsConfig {
            dim: 8,
            iterations: 50,
            burnin: 10,
            ..GsbpsConfig::negbin_default()
        };
        let chain = run_gsbps(&model, &cfg).unwrap();
        assert_eq!(chain.columns.last().unwrap(), "rho");
        assert!(chain.draws.iter().all(|r| r[10] > 0.0));
    }

    #[test]
    fn parallel_chains_use_consecutive_seeds() {
        let cfg = GsbpsConfig {
            dim: 8,
            iterations: 30,
            burnin: 5,
            seed: 4,
            ..Default::default()
        };
        let chains = run_chains(&tiny_poisson(), &cfg, 3).unwrap();
        let single = run_gsbps(&tiny_poisson(), &GsbpsConfig { seed: 5, ..cfg.clone() }).unwrap();
        assert_eq!(chains[1].draws, single.draws);
        assert_eq!(chains[2].config.seed, 6);
        let pooled = Chain::pool(&chains).unwrap();
        assert_eq!(pooled.draws.len(), 75);
    }

    #[test]
    fn frozen_theta_hyperparameter_chain() {
        // With theta fixed the (delta, lambda) steps form their own Gibbs
        // chain; its moments must match a separate simulation of the same
        // two conditionals.
        let cfg = GsbpsConfig::default();
        let pm = penalty_matrix(10, 2, 1e-6).unwrap();
        let theta: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let run = |seed: u64, n: usize| {
            let mut rng = RandomSource::new(seed);
            let mut lambda = 1.0;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let delta = sample_delta(lambda, &cfg, &mut rng).unwrap();
                lambda = sample_lambda(&theta, &pm, delta, &cfg, &mut rng).unwrap();
                out.push(lambda);
            }
            out
        };
        let a = run(1, 200_000);
        let b = run(2, 200_000);
        let (ma, _) = mean_var(&a[1000..]);
        let (mb, _) = mean_var(&b[1000..]);
        assert!((ma - mb).abs() / mb < 0.02, "{ma} {mb}");
    }

    #[test]
    fn config_validation() {
        assert!(GsbpsConfig {
            burnin: 20_000,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GsbpsConfig {
            order: 4,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GsbpsConfig {
            nu: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GsbpsConfig {
            c_f: 0.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GsbpsConfig::default().validate().is_ok());
    }

    #[test]
    fn sampler_error_carries_context() {
        let g = Gibbs::from_config(
            tiny_poisson(),
            GsbpsConfig {
                dim: 8,
                iterations: 3,
                burnin: 0,
                ..Default::default()
            },
        )
        .unwrap();
        let state = ModelState {
            theta: vec![800.0; 8],
            lambda: 1.0,
            delta: 1.0,
            rho: None,
        };
        match g.run_from(state, 0) {
            Err(Error::Sampler {
                iteration,
                coordinate,
                source,
                ..
            }) => {
                assert_eq!(iteration, 0);
                assert_eq!(coordinate, "theta_1");
                assert!(source.is_numeric(), "{source}");
            }
            other => panic!("{other:?}"),
        }
    }
}

//! Griddy-Gibbs: discretize a univariate conditional on an equidistant grid
//! around its mode and draw one grid atom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modefind::scan_mode;
use crate::rng::RandomSource;
use crate::targets::ConditionalTarget;

pub const MAX_GROWTH_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GriddyConfig {
    /// Number of grid atoms, endpoints included.
    pub points: usize,
    /// Log-density drop below the mode at which the grid stops growing.
    pub c_f: f64,
    pub scan_lo: f64,
    pub scan_hi: f64,
    pub scan_points: usize,
}

impl Default for GriddyConfig {
    fn default() -> Self {
        Self {
            points: 100,
            c_f: 0.01f64.ln(),
            scan_lo: -10.0,
            scan_hi: 10.0,
            scan_points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub points: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Grid {
    pub fn mean(&self) -> f64 {
        self.points.iter().zip(&self.probs).map(|(x, p)| x * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.points
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| p * (x - m) * (x - m))
            .sum()
    }
}

/// Marches outward from the mode with cumulative offsets
/// `sigma, 3 sigma, 7 sigma, ...` until the log-density has dropped by more
/// than `-c_f` on each side.
pub fn grow_grid<T: ConditionalTarget + ?Sized>(target: &T, mode: f64, sigma: f64, c_f: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            value: sigma,
        });
    }
    if !(c_f < 0.0) {
        return Err(Error::InvalidParameter {
            name: "c_f",
            value: c_f,
        });
    }
    let top = target.logpdf(mode);
    if !top.is_finite() {
        return Err(Error::NumericFailure {
            what: "log-density at the mode",
            at: mode,
        });
    }
    let march = |dir: f64| -> Result<f64> {
        let mut offset = 0.0;
        let mut step = sigma;
        for _ in 0..MAX_GROWTH_DOUBLINGS {
            offset += step;
            step *= 2.0;
            let t = mode + dir * offset;
            let v = target.logpdf(t);
            if v.is_nan() {
                return Err(Error::NumericFailure {
                    what: "log-density",
                    at: t,
                });
            }
            if v - top < c_f {
                return Ok(t);
            }
        }
        Err(Error::UnboundedTarget {
            doublings: MAX_GROWTH_DOUBLINGS,
        })
    };
    Ok((march(-1.0)?, march(1.0)?))
}

/// Evaluates the target on `points` equidistant atoms over `[lo, hi]`.
pub fn build_grid<T: ConditionalTarget + ?Sized>(target: &T, lo: f64, hi: f64, points: usize) -> Result<Grid> {
    if !(lo < hi) {
        return Err(Error::InvalidDomain { lower: lo, upper: hi });
    }
    if points < 2 {
        return Err(Error::InvalidDimension(format!(
            "grid needs at least 2 points, got {points}"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points)
        .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
        .collect();
    let log_weights: Vec<f64> = xs.iter().map(|&x| target.logpdf(x)).collect();
    if let Some(i) = log_weights.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NumericFailure {
            what: "log-density on the grid",
            at: xs[i],
        });
    }
    let top = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::NumericFailure {
            what: "log-density (zero on the whole grid)",
            at: lo,
        });
    }
    let raw: Vec<f64> = log_weights.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(Grid {
        points: xs,
        log_weights,
        probs: raw.iter().map(|w| w / total).collect(),
    })
}

/// Inverse-CDF draw of one grid atom.
pub fn griddy_sample(grid: &Grid, rng: &mut RandomSource) -> f64 {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (x, p) in grid.points.iter().zip(&grid.probs) {
        acc += p;
        if u <= acc {
            return *x;
        }
    }
    // Rounding shortfall: the last atom with positive weight.
    let last = grid
        .probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(grid.points.len() - 1);
    grid.points[last]
}

/// Full Griddy-Gibbs step: global scan for the mode, grid growth, draw.
pub fn griddy_draw<T: ConditionalTarget + ?Sized>(
    target: &T,
    cfg: &GriddyConfig,
    rng: &mut RandomSource,
) -> Result<f64> {
    let mode = scan_mode(target, cfg.scan_lo, cfg.scan_hi, cfg.scan_points)?;
    let (lo, hi) = grow_grid(target, mode.mode, mode.sigma, cfg.c_f)?;
    let grid = build_grid(target, lo, hi, cfg.points)?;
    Ok(griddy_sample(&grid, rng))
}

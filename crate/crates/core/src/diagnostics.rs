//! Posterior summaries, fitted curves with pointwise credible bands, density
//! normalization and Geweke convergence scores.

use serde::{Deserialize, Serialize};

use crate::basis::KnotVector;
use crate::error::{Error, Result};
use crate::gibbs::Chain;

pub const MIN_RETAINED_DRAWS: usize = 100;
pub const DEFAULT_CURVE_POINTS: usize = 200;
pub const DENSITY_CELLS: usize = 2001;
const MIN_BATCHES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Linearly interpolated empirical quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn summarize(name: &str, xs: &[f64]) -> ParamSummary {
    let s = sorted(xs);
    let m = mean(xs);
    let sd = if xs.len() > 1 {
        // Constant columns give exactly zero rather than rounding noise.
        if s[0] == s[s.len() - 1] {
            0.0
        } else {
            sample_var(xs).sqrt()
        }
    } else {
        0.0
    };
    ParamSummary {
        name: name.to_string(),
        mean: if s[0] == s[s.len() - 1] { s[0] } else { m },
        sd,
        q025: quantile(&s, 0.025),
        q50: quantile(&s, 0.5),
        q975: quantile(&s, 0.975),
    }
}

/// Summaries of every chain column over the post burn-in rows.
pub fn posterior_summary(chain: &Chain) -> Result<Vec<ParamSummary>> {
    let n = chain.retained().len();
    if n < MIN_RETAINED_DRAWS {
        return Err(Error::InsufficientDraws {
            needed: MIN_RETAINED_DRAWS,
            found: n,
        });
    }
    Ok(chain
        .columns
        .iter()
        .enumerate()
        .map(|(j, name)| summarize(name, &chain.retained_column(j)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Log,
    Logit,
    Identity,
}

impl Link {
    /// Maps a linear predictor to the response scale.
    pub fn apply(self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Identity => eta,
        }
    }
}

/// Posterior curve on a grid: `estimate` is the linked posterior-mean
/// spline, `median`, `lo95` and `hi95` are pointwise quantiles of the linked
/// per-draw curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCurve {
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub median: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
    pub link: Link,
    /// Posterior-mean coefficients behind `estimate`.
    pub coef: Vec<f64>,
    pub knots: KnotVector,
    /// Every curve value has been divided by this constant.
    pub normalizer: f64,
}

impl FittedCurve {
    /// `estimate` at an arbitrary point of the support.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let (first, b) = self.knots.eval_local(x)?;
        let eta: f64 = b.iter().enumerate().map(|(j, v)| v * self.coef[first + j]).sum();
        Ok(self.link.apply(eta) / self.normalizer)
    }
}

/// Equidistant grid of `n` points over `[lo, hi]`, endpoints exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
        .collect()
}

pub fn fitted_curve(chain: &Chain, kv: &KnotVector, link: Link, grid_size: usize) -> Result<FittedCurve> {
    let grid = linspace(kv.lower(), kv.upper(), grid_size.max(1));
    fitted_curve_on(chain, kv, link, &grid)
}

/// Fitted curve on caller-supplied points inside the support.
pub fn fitted_curve_on(chain: &Chain, kv: &KnotVector, link: Link, grid: &[f64]) -> Result<FittedCurve> {
    let k = chain.dim();
    if kv.dim() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: kv.dim(),
        });
    }
    let draws: Vec<&[f64]> = chain.retained_theta().collect();
    if draws.is_empty() {
        return Err(Error::InsufficientDraws { needed: 1, found: 0 });
    }
    let nd = draws.len() as f64;
    let coef: Vec<f64> = (0..k).map(|j| draws.iter().map(|t| t[j]).sum::<f64>() / nd).collect();
    let n = grid.len();
    let (mut estimate, mut median, mut lo95, mut hi95) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut values = Vec::with_capacity(draws.len());
    for &x in grid {
        let (first, b) = kv.eval_local(x)?;
        let eta = |t: &[f64]| -> f64 { b.iter().enumerate().map(|(j, v)| v * t[first + j]).sum() };
        estimate.push(link.apply(eta(&coef)));
        values.clear();
        values.extend(draws.iter().map(|t| link.apply(eta(t))));
        values.sort_by(f64::total_cmp);
        median.push(quantile(&values, 0.5));
        lo95.push(quantile(&values, 0.025));
        hi95.push(quantile(&values, 0.975));
    }
    Ok(FittedCurve {
        grid: grid.to_vec(),
        estimate,
        median,
        lo95,
        hi95,
        link,
        coef,
        knots: kv.clone(),
        normalizer: 1.0,
    })
}

/// Normalizes a log-link curve to a density over `support`.
pub fn density_estimate(curve: &FittedCurve, support: (f64, f64)) -> Result<FittedCurve> {
    density_estimate_with(curve, support, DENSITY_CELLS)
}

/// Like [`density_estimate`] with an explicit number of midpoint cells.
pub fn density_estimate_with(curve: &FittedCurve, support: (f64, f64), cells: usize) -> Result<FittedCurve> {
    if curve.link != Link::Log {
        return Err(Error::UnsupportedOperation(
            "density normalization needs a log-link curve".into(),
        ));
    }
    let (lo, hi) = support;
    if !(lo < hi) {
        return Err(Error::InvalidDomain { lower: lo, upper: hi });
    }
    if cells == 0 {
        return Err(Error::InvalidDimension("need at least one quadrature cell".into()));
    }
    let h = (hi - lo) / cells as f64;
    let mut integral = 0.0;
    for i in 0..cells {
        integral += curve.eval(lo + (i as f64 + 0.5) * h)?;
    }
    integral *= h;
    if !(integral > 0.0 && integral.is_finite()) {
        return Err(Error::NumericFailure {
            what: "density normalizing integral",
            at: integral,
        });
    }
    let scale = |v: &[f64]| v.iter().map(|x| x / integral).collect::<Vec<_>>();
    Ok(FittedCurve {
        grid: curve.grid.clone(),
        estimate: scale(&curve.estimate),
        median: scale(&curve.median),
        lo95: scale(&curve.lo95),
        hi95: scale(&curve.hi95),
        link: curve.link,
        coef: curve.coef.clone(),
        knots: curve.knots.clone(),
        normalizer: curve.normalizer * integral,
    })
}

/// Batch-means long-run variance with `floor(sqrt(n))` batches.
fn batch_means_variance(xs: &[f64]) -> Result<f64> {
    let batches = (xs.len() as f64).sqrt().floor() as usize;
    if batches < MIN_BATCHES {
        return Err(Error::InsufficientDraws {
            needed: MIN_BATCHES * MIN_BATCHES,
            found: xs.len(),
        });
    }
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&xs[b * size..(b + 1) * size])).collect();
    Ok(size as f64 * sample_var(&means))
}

/// Geweke z-score comparing the first `frac_a` and last `frac_b` of a series.
pub fn geweke_series(xs: &[f64], frac_a: f64, frac_b: f64) -> Result<f64> {
    if !(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "geweke window fractions",
            value: frac_a + frac_b,
        });
    }
    let n = xs.len();
    let na = (frac_a * n as f64).floor() as usize;
    let nb = (frac_b * n as f64).floor() as usize;
    let a = &xs[..na];
    let b = &xs[n - nb..];
    let (va, vb) = (batch_means_variance(a)?, batch_means_variance(b)?);
    let diff = mean(a) - mean(b);
    let se = (va / na as f64 + vb / nb as f64).sqrt();
    if se == 0.0 {
        // Constant windows: equal means are perfectly consistent.
        return Ok(if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        });
    }
    Ok(diff / se)
}

/// Geweke z-score of every chain column over the post burn-in rows.
pub fn geweke(chain: &Chain, frac_a: f64, frac_b: f64) -> Result<Vec<f64>> {
    (0..chain.columns.len())
        .map(|j| geweke_series(&chain.retained_column(j), frac_a, frac_b))
        .collect()
}

/// Fraction of scores with `|z| < 1.96`.
pub fn geweke_pass_rate(z: &[f64]) -> f64 {
    z.iter().filter(|v| v.abs() < 1.96).count() as f64 / z.len() as f64
}

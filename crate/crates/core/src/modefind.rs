//! Mode location for univariate conditional targets.
//!
//! Log-concave targets are bracketed analytically and solved with a
//! safeguarded Newton iteration. Targets without a concavity guarantee fall
//! back to a grid scan with golden-section refinement.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::targets::ConditionalTarget;

pub const MAX_NEWTON_ITERATIONS: usize = 100;
const NEWTON_TOL: f64 = 1e-8;
const MAX_WIDENINGS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Default bracket padding: ten conditional prior standard deviations.
pub fn default_kappa(lambda_z: f64) -> f64 {
    10.0 / lambda_z.sqrt()
}

fn derivative<T: ConditionalTarget + ?Sized>(target: &T, t: f64) -> Result<f64> {
    let g = target.dlogpdf(t);
    if g.is_nan() {
        Err(Error::NumericFailure {
            what: "log-density derivative",
            at: t,
        })
    } else {
        Ok(g)
    }
}

/// Interval known to contain the mode of `phi(t) = -0.5 lambda_z t^2 + ...`.
///
/// Because the likelihood part is concave, `phi'(t) <= phi'(0) - lambda_z t`,
/// so the mode lies between 0 and `phi'(0) / lambda_z`; `kappa` pads the far
/// end.
pub fn bracket_mode<T: ConditionalTarget + ?Sized>(target: &T, lambda_z: f64, kappa: f64) -> Result<(f64, f64)> {
    ensure_positive("lambda_z", lambda_z)?;
    ensure_positive("kappa", kappa)?;
    let g0 = derivative(target, 0.0)?;
    Ok(bracket_from_slope(g0, lambda_z, kappa))
}

fn bracket_from_slope(g0: f64, lambda_z: f64, kappa: f64) -> (f64, f64) {
    if g0 < 0.0 {
        (g0 / lambda_z - kappa, 0.0)
    } else if g0 > 0.0 {
        (0.0, g0 / lambda_z + kappa)
    } else {
        (0.0, 0.0)
    }
}

/// Safeguarded Newton search for the root of `phi'` inside `bracket`,
/// started from the bracket midpoint.
pub fn find_mode<T: ConditionalTarget + ?Sized>(target: &T, bracket: (f64, f64)) -> Result<ModeResult> {
    let g0 = derivative(target, 0.0)?;
    newton(target, bracket, 0.5 * (bracket.0 + bracket.1), tolerance(g0))
}

fn tolerance(g0: f64) -> f64 {
    if g0.is_finite() {
        NEWTON_TOL * (1.0 + g0.abs())
    } else {
        NEWTON_TOL
    }
}

/// Brackets and solves in one step, starting Newton from `start` when it lies
/// inside the bracket.
///
/// If floating point leaves the mode on a bracket endpoint with the
/// derivative still pointing outward, the bracket is widened by `kappa` and
/// the search repeated.
pub fn locate_mode<T: ConditionalTarget + ?Sized>(target: &T, lambda_z: f64, start: f64) -> Result<ModeResult> {
    ensure_positive("lambda_z", lambda_z)?;
    let kappa = default_kappa(lambda_z);
    let g0 = derivative(target, 0.0)?;
    let tol = tolerance(g0);
    let (mut lo, mut hi) = bracket_from_slope(g0, lambda_z, kappa);
    if lo == hi {
        return finish(target, lo, 0, (lo, hi));
    }
    for _ in 0..=MAX_WIDENINGS {
        let glo = derivative(target, lo)?;
        let ghi = derivative(target, hi)?;
        if glo < 0.0 {
            lo -= kappa;
            continue;
        }
        if ghi > 0.0 {
            hi += kappa;
            continue;
        }
        let x0 = if start > lo && start < hi {
            start
        } else {
            0.5 * (lo + hi)
        };
        return newton(target, (lo, hi), x0, tol);
    }
    Err(Error::ConvergenceFailure {
        iterations: MAX_WIDENINGS,
    })
}

fn newton<T: ConditionalTarget + ?Sized>(target: &T, bracket: (f64, f64), start: f64, tol: f64) -> Result<ModeResult> {
    let (mut lo, mut hi) = bracket;
    if !(lo <= hi) {
        return Err(Error::InvalidDomain { lower: lo, upper: hi });
    }
    if lo == hi {
        return finish(target, lo, 0, bracket);
    }
    let mut x = start.clamp(lo, hi);
    let mut g = derivative(target, x)?;
    // Step lengths of the last two iterations; Newton must at least halve
    // the older one or the iteration bisects instead.
    let mut dx = hi - lo;
    let mut dx_old = dx;
    for it in 1..=MAX_NEWTON_ITERATIONS {
        if g.abs() < tol {
            return finish(target, x, it - 1, bracket);
        }
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return finish(target, x, it, bracket);
        }
        let h = target.d2logpdf(x);
        let x_prev = x;
        let mut stepped = false;
        if h < 0.0 && h.is_finite() {
            let xn = x - g / h;
            if xn > lo && xn < hi && (xn - x).abs() <= 0.5 * dx_old.abs() {
                let gn = derivative(target, xn)?;
                if gn.abs() < g.abs() {
                    x = xn;
                    g = gn;
                    stepped = true;
                }
            }
        }
        if !stepped {
            x = 0.5 * (lo + hi);
            g = derivative(target, x)?;
        }
        dx_old = dx;
        dx = x - x_prev;
    }
    if g.abs() < tol {
        return finish(target, x, MAX_NEWTON_ITERATIONS, bracket);
    }
    Err(Error::ConvergenceFailure {
        iterations: MAX_NEWTON_ITERATIONS,
    })
}

fn finish<T: ConditionalTarget + ?Sized>(
    target: &T,
    mode: f64,
    iterations: usize,
    bracket: (f64, f64),
) -> Result<ModeResult> {
    let h = target.d2logpdf(mode);
    if !(h < 0.0) || !h.is_finite() {
        return Err(Error::NumericFailure {
            what: "curvature at the mode",
            at: mode,
        });
    }
    Ok(ModeResult {
        mode,
        sigma: (-h).sqrt().recip(),
        iterations,
        bracket,
    })
}

/// Global mode of a possibly multimodal target on `[lo, hi]`: a scan over
/// `points` equidistant abscissae, then golden-section refinement around the
/// best one.
///
/// `sigma` comes from a central second difference at the mode and falls back
/// to 1 when the curvature there is not negative.
pub fn scan_mode<T: ConditionalTarget + ?Sized>(target: &T, lo: f64, hi: f64, points: usize) -> Result<ModeResult> {
    if !(lo < hi) {
        return Err(Error::InvalidDomain { lower: lo, upper: hi });
    }
    if points < 3 {
        return Err(Error::InvalidDimension(format!(
            "scan needs at least 3 points, got {points}"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..points {
        let t = lo + step * i as f64;
        let v = target.logpdf(t);
        if v.is_nan() {
            return Err(Error::NumericFailure {
                what: "log-density",
                at: t,
            });
        }
        if v > best.1 {
            best = (i, v);
        }
    }
    if best.1 == f64::NEG_INFINITY {
        return Err(Error::NumericFailure {
            what: "log-density (no finite value on the scan grid)",
            at: lo,
        });
    }
    let a = lo + step * best.0.saturating_sub(1) as f64;
    let b = lo + step * (best.0 + 1).min(points - 1) as f64;
    let (mode, iterations) = golden_section_max(|t| target.logpdf(t), a, b, 1e-10);
    let h = 1e-4 * mode.abs().max(1.0);
    let curv = (target.logpdf(mode + h) - 2.0 * target.logpdf(mode) + target.logpdf(mode - h)) / (h * h);
    let sigma = if curv < 0.0 && curv.is_finite() {
        (-curv).sqrt().recip()
    } else {
        1.0
    };
    Ok(ModeResult {
        mode,
        sigma,
        iterations,
        bracket: (a, b),
    })
}

/// Maximizer of a unimodal function on `[a, b]`, with the iteration count.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, usize) {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut it = 0;
    while (b - a).abs() > tol * (1.0 + c.abs().max(d.abs())) && it < 200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        it += 1;
    }
    let mid = 0.5 * (a + b);
    // Scan endpoints can beat interior points when the maximum sits on them.
    let best = [a, mid, b]
        .into_iter()
        .map(|t| (t, f(t)))
        .fold((mid, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
    (best.0, it)
}

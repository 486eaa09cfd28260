//! Adaptive rejection sampling for strictly log-concave univariate targets.
//!
//! The envelope is the exponential of the tangent upper hull, the squeeze is
//! the chord lower hull. Masses live in log space throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modefind::ModeResult;
use crate::rng::RandomSource;
use crate::targets::ConditionalTarget;

const SLOPE_TIE: f64 = 1e-12;
const MERGE_TOL: f64 = 1e-12;
const MAX_INIT_DOUBLINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArsConfig {
    /// Initial abscissae span `mode +/- c * sigma`.
    pub c: f64,
    /// Number of initial abscissae.
    pub init_points: usize,
    pub max_points: usize,
    pub max_rejections: usize,
}

impl Default for ArsConfig {
    fn default() -> Self {
        Self {
            c: 2.0,
            init_points: 5,
            max_points: 100,
            max_rejections: 1000,
        }
    }
}

/// Tangent/chord envelope state.
///
/// Segment `l` of the upper hull is the tangent at `abscissae[l]` restricted
/// to `[breakpoints[l-1], breakpoints[l]]`, with infinite outer limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullState {
    pub abscissae: Vec<f64>,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub breakpoints: Vec<f64>,
    pub segment_log_masses: Vec<f64>,
    pub total_log_mass: f64,
}

impl HullState {
    /// Builds the hull from `(t, phi(t), phi'(t))` triples in any order.
    pub fn from_points(mut points: Vec<(f64, f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EnvelopeError("hull needs at least one abscissa".into()));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite()))
        {
            return Err(Error::EnvelopeError(format!("non-finite hull point at {}", p.0)));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        points.dedup_by(|b, a| (b.0 - a.0).abs() <= MERGE_TOL * a.0.abs().max(1.0));
        let mut hull = Self {
            abscissae: points.iter().map(|p| p.0).collect(),
            phi: points.iter().map(|p| p.1).collect(),
            dphi: points.iter().map(|p| p.2).collect(),
            breakpoints: Vec::new(),
            segment_log_masses: Vec::new(),
            total_log_mass: f64::NAN,
        };
        hull.rebuild()?;
        Ok(hull)
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    fn tangent(&self, l: usize, t: f64) -> f64 {
        self.phi[l] + self.dphi[l] * (t - self.abscissae[l])
    }

    fn segment_bounds(&self, l: usize) -> (f64, f64) {
        let a = if l == 0 {
            f64::NEG_INFINITY
        } else {
            self.breakpoints[l - 1]
        };
        let b = self.breakpoints.get(l).copied().unwrap_or(f64::INFINITY);
        (a, b)
    }

    fn rebuild(&mut self) -> Result<()> {
        let n = self.abscissae.len();
        self.breakpoints = (0..n - 1)
            .map(|l| {
                let (x0, x1) = (self.abscissae[l], self.abscissae[l + 1]);
                let (g0, g1) = (self.dphi[l], self.dphi[l + 1]);
                let z = if (g0 - g1).abs() < SLOPE_TIE {
                    0.5 * (x0 + x1)
                } else {
                    (self.phi[l + 1] - self.phi[l] - x1 * g1 + x0 * g0) / (g0 - g1)
                };
                if z.is_nan() {
                    0.5 * (x0 + x1)
                } else {
                    z.clamp(x0, x1)
                }
            })
            .collect();
        if !(self.dphi[0] > 0.0) || !(self.dphi[n - 1] < 0.0) {
            return Err(Error::EnvelopeError(format!(
                "outer tangent slopes ({}, {}) do not give a finite envelope",
                self.dphi[0],
                self.dphi[n - 1]
            )));
        }
        self.segment_log_masses = (0..n)
            .map(|l| {
                let (a, b) = self.segment_bounds(l);
                segment_log_mass(self.tangent(l, if a.is_finite() { a } else { b }), a, b, self.dphi[l])
            })
            .collect();
        self.total_log_mass = log_sum_exp(&self.segment_log_masses);
        if !self.total_log_mass.is_finite() {
            return Err(Error::EnvelopeError(format!(
                "envelope log mass is {}",
                self.total_log_mass
            )));
        }
        Ok(())
    }

    /// Adds an abscissa; returns false when it was merged or the hull is full.
    pub fn insert(&mut self, t: f64, phi: f64, dphi: f64, max_points: usize) -> Result<bool> {
        if self.len() >= max_points || !(t.is_finite() && phi.is_finite() && dphi.is_finite()) {
            return Ok(false);
        }
        let pos = self.abscissae.partition_point(|&x| x < t);
        let close = |i: usize| (self.abscissae[i] - t).abs() <= MERGE_TOL * t.abs().max(1.0);
        if (pos < self.len() && close(pos)) || (pos > 0 && close(pos - 1)) {
            return Ok(false);
        }
        let backup = self.clone();
        self.abscissae.insert(pos, t);
        self.phi.insert(pos, phi);
        self.dphi.insert(pos, dphi);
        if let Err(e) = self.rebuild() {
            *self = backup;
            return Err(e);
        }
        Ok(true)
    }
}

/// Log of `integral_a^b exp(h(a) + s (t - a)) dt`, where `h_anchor` is the
/// hull value at `a` (or at `b` when `a = -inf`).
fn segment_log_mass(h_anchor: f64, a: f64, b: f64, s: f64) -> f64 {
    if a.is_infinite() {
        // h_anchor is the value at b; requires s > 0.
        return h_anchor - s.ln();
    }
    if b.is_infinite() {
        return h_anchor - (-s).ln();
    }
    let w = b - a;
    if w <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if s.abs() < SLOPE_TIE {
        return h_anchor + 0.5 * s * w + w.ln();
    }
    if s > 0.0 {
        // Anchor the integral at the higher end b.
        h_anchor + s * w + (-(-s * w).exp_m1()).ln() - s.ln()
    } else {
        h_anchor + (-(s * w).exp_m1()).ln() - (-s).ln()
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Inverse CDF of the density proportional to `exp(s t)` on `[a, b]`.
///
/// The draw is anchored at the end where the density is largest so that
/// `expm1`/`ln_1p` keep full precision for steep segments.
pub(crate) fn sample_segment(a: f64, b: f64, s: f64, u: f64) -> f64 {
    if s.abs() < SLOPE_TIE {
        return a + u * (b - a);
    }
    let r = s.abs();
    let w = b - a;
    let tail = if w.is_finite() { -(-r * w).exp_m1() } else { 1.0 };
    if s > 0.0 {
        // Distance below b has CDF 1 - F(t); use 1 - u to keep t monotone in u.
        let offset = -(-(1.0 - u) * tail).ln_1p() / r;
        (b - offset).max(a)
    } else {
        let offset = -(-u * tail).ln_1p() / r;
        (a + offset).min(b)
    }
}

/// Lays out `points` equidistant abscissae over `mode +/- c sigma`, doubling
/// `c` until the outer slopes point inward.
pub fn init_hull<T: ConditionalTarget + ?Sized>(
    target: &T,
    mode: &ModeResult,
    c: f64,
    points: usize,
) -> Result<HullState> {
    if !(c > 0.0) || points < 2 {
        return Err(Error::InitializationFailure(format!(
            "hull needs c > 0 and at least 2 points, got c = {c}, L = {points}"
        )));
    }
    let mut width = c;
    for _ in 0..=MAX_INIT_DOUBLINGS {
        let lo = mode.mode - width * mode.sigma;
        let step = 2.0 * width * mode.sigma / (points - 1) as f64;
        let pts: Vec<(f64, f64, f64)> = (0..points)
            .map(|i| evaluate_toward_mode(target, lo + step * i as f64, mode.mode))
            .collect::<Result<_>>()?;
        let left = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
        let right = pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
        if left > 0.0 && right < 0.0 {
            return HullState::from_points(pts);
        }
        width *= 2.0;
    }
    Err(Error::InitializationFailure(format!(
        "no abscissae on both sides of the mode after {MAX_INIT_DOUBLINGS} doublings"
    )))
}

/// Evaluates the target at `t`, halving the distance to `mode` while the
/// value or slope is not finite.
fn evaluate_toward_mode<T: ConditionalTarget + ?Sized>(target: &T, mut t: f64, mode: f64) -> Result<(f64, f64, f64)> {
    for _ in 0..64 {
        let (f, g) = (target.logpdf(t), target.dlogpdf(t));
        if f.is_finite() && g.is_finite() {
            return Ok((t, f, g));
        }
        t = mode + 0.5 * (t - mode);
    }
    Err(Error::NumericFailure {
        what: "log-density near the mode",
        at: t,
    })
}

/// Chord through neighbouring abscissae; `-inf` outside the hull range.
pub fn lower_hull(hs: &HullState, t: f64) -> f64 {
    let n = hs.len();
    let (first, last) = (hs.abscissae[0], hs.abscissae[n - 1]);
    if !(t >= first && t <= last) {
        return f64::NEG_INFINITY;
    }
    if t == last {
        return hs.phi[n - 1];
    }
    let j = hs.abscissae.partition_point(|&x| x <= t) - 1;
    let (x0, x1) = (hs.abscissae[j], hs.abscissae[j + 1]);
    let w = (t - x0) / (x1 - x0);
    (1.0 - w) * hs.phi[j] + w * hs.phi[j + 1]
}

/// Tangent upper hull, defined on the whole real line.
pub fn upper_hull(hs: &HullState, t: f64) -> f64 {
    let l = hs.breakpoints.partition_point(|&z| z < t);
    hs.tangent(l, t)
}

/// Exact draw from the normalized envelope `exp(upper_hull) / mass`.
pub fn sample_hull(hs: &HullState, rng: &mut RandomSource) -> Result<f64> {
    if !hs.total_log_mass.is_finite() {
        return Err(Error::EnvelopeError(format!(
            "envelope log mass is {}",
            hs.total_log_mass
        )));
    }
    let u = rng.uniform();
    let mut acc = 0.0;
    let last = hs.len() - 1;
    let mut seg = last;
    for (l, &lm) in hs.segment_log_masses.iter().enumerate() {
        acc += (lm - hs.total_log_mass).exp();
        if u <= acc {
            seg = l;
            break;
        }
    }
    // Rounding can leave `acc` a hair below 1; the last non-empty segment wins.
    while hs.segment_log_masses[seg] == f64::NEG_INFINITY && seg > 0 {
        seg -= 1;
    }
    let (a, b) = hs.segment_bounds(seg);
    Ok(sample_segment(a, b, hs.dphi[seg], rng.uniform()))
}

/// One exact draw from a log-concave target.
///
/// Returns the draw and the number of target evaluations made by the
/// rejection loop (hull initialization is not counted).
pub fn ars_sample<T: ConditionalTarget + ?Sized>(
    target: &T,
    mode: &ModeResult,
    rng: &mut RandomSource,
    cfg: &ArsConfig,
) -> Result<(f64, usize)> {
    if !target.declared_logconcave() {
        return Err(Error::UnsupportedOperation(
            "adaptive rejection sampling needs a log-concave target".into(),
        ));
    }
    let mut hull = init_hull(target, mode, cfg.c, cfg.init_points)?;
    let mut evals = 0;
    let mut rejections = 0;
    loop {
        let t = sample_hull(&hull, rng)?;
        let log_u = rng.uniform().ln();
        let up = upper_hull(&hull, t);
        if log_u <= lower_hull(&hull, t) - up {
            return Ok((t, evals));
        }
        let f = target.logpdf(t);
        evals += 1;
        if f.is_nan() {
            return Err(Error::NumericFailure {
                what: "log-density",
                at: t,
            });
        }
        if log_u <= f - up {
            return Ok((t, evals));
        }
        rejections += 1;
        if rejections >= cfg.max_rejections {
            return Err(Error::SamplerStall { rejections });
        }
        if f.is_finite() {
            let g = target.dlogpdf(t);
            // A failed rebuild leaves the previous, still valid hull in place.
            let _ = hull.insert(t, f, g, cfg.max_points);
        }
    }
}

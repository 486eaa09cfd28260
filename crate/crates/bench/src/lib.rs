//! Deterministic fixtures shared by the benchmarks.

use gsbps::{CountSeriesData, HistogramData, ModelSpec};

/// Bimodal histogram on `[0, 1]` with `bins` bins and noise-free counts.
pub fn bimodal_histogram(bins: usize) -> ModelSpec {
    let w = 1.0 / bins as f64;
    let mids: Vec<f64> = (0..bins).map(|i| (i as f64 + 0.5) * w).collect();
    let counts = mids
        .iter()
        .map(|&x| {
            let bump = |c: f64, s: f64| (-0.5 * ((x - c) / s).powi(2)).exp();
            (40.0 * bump(0.3, 0.08) + 60.0 * bump(0.7, 0.1)).round() as u64
        })
        .collect();
    ModelSpec::Poisson(HistogramData::new(mids, counts, w).expect("valid histogram"))
}

/// Single epidemic wave over `days` days.
pub fn epidemic_series(days: usize) -> ModelSpec {
    let y = (0..days)
        .map(|d| {
            let t = d as f64 / days as f64;
            (2.0 + 45.0 * (-0.5 * ((t - 0.4) / 0.12).powi(2)).exp()).round() as u64
        })
        .collect();
    ModelSpec::NegBin(CountSeriesData::from_counts(y).expect("valid series"))
}

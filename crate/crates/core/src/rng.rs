//! Seedable random variates for the samplers.
//!
//! Every chain owns exactly one [`RandomSource`] and threads it through each
//! sampling call. There is no global generator, so a `(data, config, seed)`
//! triple always reproduces the same chain bit for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_positive, Result};

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on the open interval (0, 1).
    ///
    /// Uses the top 53 bits shifted by half an ulp, so neither endpoint is
    /// reachable.
    pub fn uniform(&mut self) -> f64 {
        let bits = self.inner.next_u64() >> 11;
        (bits as f64 + 0.5) * TWO_POW_M53
    }

    /// Standard normal draw (Marsaglia polar method, spare value cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * m);
                return u * m;
            }
        }
    }

    /// Gamma draw with density proportional to `x^(shape-1) exp(-rate x)`.
    ///
    /// Marsaglia–Tsang squeeze for `shape >= 1`; smaller shapes are boosted
    /// to `shape + 1` and scaled by `U^(1/shape)`.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> Result<f64> {
        ensure_positive("shape", shape)?;
        ensure_positive("rate", rate)?;
        if shape < 1.0 {
            let boosted = self.marsaglia_tsang(shape + 1.0);
            let u = self.uniform();
            return Ok(boosted * u.powf(1.0 / shape) / rate);
        }
        Ok(self.marsaglia_tsang(shape) / rate)
    }

    fn marsaglia_tsang(&mut self, shape: f64) -> f64 {
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let (x, v) = loop {
                let x = self.normal();
                let v = 1.0 + c * x;
                if v > 0.0 {
                    break (x, v * v * v);
                }
            };
            let u = self.uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn uniform_is_open_and_centred() {
        let mut rng = RandomSource::new(1);
        let xs: Vec<f64> = (0..1_000_000).map(|_| rng.uniform()).collect();
        let (m, _) = mean_var(&xs);
        assert!((m - 0.5).abs() < 3.0 / (12.0e6f64).sqrt());
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo > 0.0 && hi < 1.0);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = RandomSource::new(42);
        let mut b = RandomSource::new(42);
        for _ in 0..1000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            assert_eq!(
                a.gamma(2.5, 1.5).unwrap().to_bits(),
                b.gamma(2.5, 1.5).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = RandomSource::new(7);
        let xs: Vec<f64> = (0..1_000_000).map(|_| rng.normal()).collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.004, "mean {m}");
        assert!((v - 1.0).abs() < 0.01, "var {v}");
    }

    #[test]
    fn exponential_special_case() {
        let mut rng = RandomSource::new(3);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.gamma(1.0, 2.0).unwrap()).collect();
        let (m, _) = mean_var(&xs);
        let se = 0.5 / (n as f64).sqrt();
        assert!((m - 0.5).abs() < 3.0 * se, "mean {m}");
    }

    #[test]
    fn gamma_eleven_moments() {
        let mut rng = RandomSource::new(12);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.gamma(11.0, 1.0).unwrap()).collect();
        let (m, v) = mean_var(&xs);
        let nf = n as f64;
        assert!((m - 11.0).abs() < 3.0 * (11.0 / nf).sqrt(), "mean {m}");
        // Var(s^2) = sigma^4 (2/(n-1) + excess/n), excess kurtosis 6/shape.
        let se_var = (121.0 * (2.0 / (nf - 1.0) + (6.0 / 11.0) / nf)).sqrt();
        assert!((v - 11.0).abs() < 5.0 * se_var, "var {v}");
    }

    #[test]
    fn gamma_rejects_bad_parameters() {
        let mut rng = RandomSource::new(0);
        assert!(rng.gamma(0.0, 1.0).is_err());
        assert!(rng.gamma(1.0, -1.0).is_err());
        assert!(rng.gamma(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn small_shape_is_positive() {
        let mut rng = RandomSource::new(5);
        for _ in 0..10_000 {
            let x = rng.gamma(0.05, 1.0).unwrap();
            assert!(x >= 0.0 && x.is_finite());
        }
    }
}

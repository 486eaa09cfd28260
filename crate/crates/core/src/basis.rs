//! Cubic B-spline bases on a compact support.
//!
//! Knots are equidistant inside `[lower, upper]` with the boundary knots
//! repeated `degree + 1` times, so a basis of dimension `K` has `K - 4`
//! interior knots and spans exactly the support.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CUBIC: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    lower: f64,
    upper: f64,
    degree: usize,
    knots: Vec<f64>,
}

/// Open-uniform cubic knot vector with `dim` basis functions on `[lower, upper]`.
pub fn make_knots(lower: f64, upper: f64, dim: usize) -> Result<KnotVector> {
    KnotVector::new(lower, upper, dim)
}

impl KnotVector {
    pub fn new(lower: f64, upper: f64, dim: usize) -> Result<Self> {
        let degree = CUBIC;
        if dim < degree + 1 {
            return Err(Error::InvalidDimension(format!(
                "a cubic basis needs at least {} functions, got {dim}",
                degree + 1
            )));
        }
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidDomain { lower, upper });
        }
        let segments = dim - degree;
        let h = (upper - lower) / segments as f64;
        let mut knots = Vec::with_capacity(dim + degree + 1);
        knots.extend(std::iter::repeat_n(lower, degree + 1));
        knots.extend((1..segments).map(|i| lower + i as f64 * h));
        knots.extend(std::iter::repeat_n(upper, degree + 1));
        Ok(Self {
            lower,
            upper,
            degree,
            knots,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_count(&self) -> usize {
        self.knots.len() - 2 * (self.degree + 1)
    }

    /// Basis dimension `K`.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Index `s` of the knot span with `t[s] <= x < t[s+1]`; the right
    /// endpoint is assigned to the last non-empty span.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = self.dim() - 1;
        if x >= self.upper {
            return last;
        }
        // knots[p..=last+1] is strictly increasing.
        let interior = &self.knots[p + 1..=last];
        p + interior.partition_point(|&t| t <= x)
    }

    /// The `degree + 1` possibly-nonzero basis values at `x` together with the
    /// index of the first one.
    pub fn eval_local(&self, x: f64) -> Result<(usize, [f64; CUBIC + 1])> {
        if !self.contains(x) {
            return Err(Error::OutOfSupport {
                x,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let p = self.degree;
        let s = self.span(x);
        let t = &self.knots;
        let mut n = [0.0; CUBIC + 1];
        let mut left = [0.0; CUBIC + 1];
        let mut right = [0.0; CUBIC + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((s - p, n))
    }

    /// Full basis vector `b(x)` of length `K`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let (first, local) = self.eval_local(x)?;
        let mut out = vec![0.0; self.dim()];
        out[first..first + local.len()].copy_from_slice(&local);
        Ok(out)
    }
}

pub fn eval_basis(x: f64, kv: &KnotVector) -> Result<Vec<f64>> {
    kv.eval(x)
}

/// Dense `n x K` basis matrix with a per-column index of nonzero rows.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    values: DMatrix<f64>,
    columns: Vec<Vec<(usize, f64)>>,
}

impl BasisMatrix {
    pub fn from_dense(values: DMatrix<f64>) -> Self {
        let columns = (0..values.ncols())
            .map(|k| {
                values
                    .column(k)
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b != 0.0)
                    .map(|(i, &b)| (i, b))
                    .collect()
            })
            .collect();
        Self { values, columns }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Nonzero `(row, b_k(x_row))` pairs of column `k`.
    pub fn column_support(&self, k: usize) -> &[(usize, f64)] {
        &self.columns[k]
    }

    /// Linear predictor `B theta`.
    pub fn predictor(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                found: theta.len(),
            });
        }
        let mut eta = vec![0.0; self.rows()];
        for (k, col) in self.columns.iter().enumerate() {
            for &(i, b) in col {
                eta[i] += theta[k] * b;
            }
        }
        Ok(eta)
    }
}

pub fn design_matrix(xs: &[f64], kv: &KnotVector) -> Result<BasisMatrix> {
    let mut values = DMatrix::zeros(xs.len(), kv.dim());
    for (i, &x) in xs.iter().enumerate() {
        let (first, local) = kv.eval_local(x)?;
        for (j, v) in local.iter().enumerate() {
            values[(i, first + j)] = *v;
        }
    }
    Ok(BasisMatrix::from_dense(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook recursive Cox–de Boor definition with 0/0 := 0.
    fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64, upper: f64) -> f64 {
        if p == 0 {
            let last_span = t[i] < t[i + 1] && t[i + 1] == upper;
            return if (t[i] <= x && x < t[i + 1]) || (x == upper && last_span) {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = t[i + p] - t[i];
        if d1 > 0.0 {
            v += (x - t[i]) / d1 * cox_de_boor(t, i, p - 1, x, upper);
        }
        let d2 = t[i + p + 1] - t[i + 1];
        if d2 > 0.0 {
            v += (t[i + p + 1] - x) / d2 * cox_de_boor(t, i + 1, p - 1, x, upper);
        }
        v
    }

    fn oracle(kv: &KnotVector, x: f64) -> Vec<f64> {
        (0..kv.dim())
            .map(|i| cox_de_boor(kv.knots(), i, 3, x, kv.upper()))
            .collect()
    }

    #[test]
    fn knots_for_ten_functions() {
        let kv = make_knots(0.0, 1.0, 10).unwrap();
        assert_eq!(kv.knots().len(), 14);
        assert_eq!(kv.interior_count(), 6);
        for (i, t) in kv.knots()[4..10].iter().enumerate() {
            assert!((t - (i + 1) as f64 / 7.0).abs() < 1e-15);
        }
        assert_eq!(kv.dim(), 10);
    }

    #[test]
    fn minimal_basis_is_bernstein() {
        let kv = make_knots(0.0, 1.0, 4).unwrap();
        assert_eq!(kv.interior_count(), 0);
        let x: f64 = 0.3;
        let b = kv.eval(x).unwrap();
        let bern = [
            (1.0 - x).powi(3),
            3.0 * x * (1.0 - x).powi(2),
            3.0 * x * x * (1.0 - x),
            x.powi(3),
        ];
        for (a, e) in b.iter().zip(bern) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn dose_range_basis() {
        let kv = make_knots(4.7, 5.4, 8).unwrap();
        assert_eq!(kv.dim(), 8);
        let b = kv.eval(5.05).unwrap();
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(make_knots(0.0, 1.0, 3), Err(Error::InvalidDimension(_))));
        assert!(matches!(make_knots(1.0, 1.0, 10), Err(Error::InvalidDomain { .. })));
        assert!(matches!(make_knots(2.0, 1.0, 10), Err(Error::InvalidDomain { .. })));
        let kv = make_knots(0.0, 1.0, 10).unwrap();
        assert!(matches!(kv.eval(1.0 + 1e-9), Err(Error::OutOfSupport { .. })));
        assert!(matches!(kv.eval(-0.1), Err(Error::OutOfSupport { .. })));
    }

    #[test]
    fn clamped_ends() {
        let kv = make_knots(0.0, 1.0, 10).unwrap();
        let b = kv.eval(0.0).unwrap();
        assert_eq!(b[0], 1.0);
        assert!(b[1..].iter().all(|&v| v == 0.0));
        let b = kv.eval(1.0).unwrap();
        assert_eq!(b[9], 1.0);
        assert!(b[..9].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn five_functions_at_half() {
        let kv = make_knots(0.0, 1.0, 5).unwrap();
        let b = kv.eval(0.5).unwrap();
        let expect = oracle(&kv, 0.5);
        for (a, e) in b.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn design_rows_match_eval() {
        let kv = make_knots(0.0, 1.0, 10).unwrap();
        let mids: Vec<f64> = kv.knots()[3..11].windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let bm = design_matrix(&mids, &kv).unwrap();
        assert_eq!(bm.cols(), 10);
        for (i, &x) in mids.iter().enumerate() {
            let row = kv.eval(x).unwrap();
            let sum: f64 = bm.values().row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for k in 0..10 {
                assert_eq!(bm.values()[(i, k)], row[k]);
            }
        }
        let single = design_matrix(&[0.37], &kv).unwrap();
        assert_eq!(single.rows(), 1);
        assert!(design_matrix(&[0.5, 2.0], &kv).is_err());
    }

    #[test]
    fn predictor_matches_dense_product() {
        let kv = make_knots(0.0, 2.0, 12).unwrap();
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 19.5).collect();
        let bm = design_matrix(&xs, &kv).unwrap();
        let theta: Vec<f64> = (0..12).map(|k| (k as f64 * 0.7).sin()).collect();
        let eta = bm.predictor(&theta).unwrap();
        let dense = bm.values() * nalgebra::DVector::from_vec(theta);
        for i in 0..xs.len() {
            assert!((eta[i] - dense[i]).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn agrees_with_recursion(dim in 4usize..40, u in 0.0f64..=1.0, lo in -5.0f64..5.0, w in 0.1f64..10.0) {
            let kv = make_knots(lo, lo + w, dim).unwrap();
            let x = (lo + u * w).min(lo + w);
            let b = kv.eval(x).unwrap();
            let expect = oracle(&kv, x);
            for (a, e) in b.iter().zip(&expect) {
                prop_assert!((a - e).abs() < 1e-12);
            }
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(b.iter().all(|&v| v >= 0.0));
            prop_assert!(b.iter().filter(|&&v| v != 0.0).count() <= 4);
        }

        #[test]
        fn local_support(dim in 4usize..30, u in 0.0f64..1.0) {
            let kv = make_knots(0.0, 1.0, dim).unwrap();
            let b = kv.eval(u).unwrap();
            let t = kv.knots();
            for k in 0..dim {
                if u < t[k] || u >= t[k + 4] {
                    prop_assert_eq!(b[k], 0.0);
                }
            }
        }
    }
}

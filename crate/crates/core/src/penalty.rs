//! Difference penalties and the conditional prior of a single coefficient.
//!
//! Under the random-walk prior `theta | lambda ~ N(0, (lambda P)^-1)` with
//! `P = D'D + eps I`, each coefficient has a Gaussian full conditional with
//! mean `psi_k / z_k` and variance `1 / (lambda z_k)`, where `z_k = P[k,k]`
//! and `psi_k = -sum_{j != k} P[k,j] theta_j`. The assembled matrices `E`
//! (diagonal of `1 / z_k`) and `C = (A - A o I) E` with `A = -D'D` give both
//! quantities as plain row products.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-6;

/// `(K - r) x K` matrix of `r`th order differences.
pub fn diff_matrix(dim: usize, order: usize) -> Result<DMatrix<f64>> {
    if !(2..=3).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    if dim <= order {
        return Err(Error::InvalidDimension(format!(
            "difference order {order} needs more than {order} coefficients, got {dim}"
        )));
    }
    Ok(difference_operator(dim, order))
}

/// Any-order difference operator; `diff_matrix` restricts the public orders.
pub(crate) fn difference_operator(dim: usize, order: usize) -> DMatrix<f64> {
    let stencil = binomial_stencil(order);
    let rows = dim.saturating_sub(order);
    let mut d = DMatrix::zeros(rows, dim);
    for i in 0..rows {
        for (j, c) in stencil.iter().enumerate() {
            d[(i, i + j)] = *c;
        }
    }
    d
}

/// Signed binomial coefficients of `(x - 1)^order`, lowest power last.
fn binomial_stencil(order: usize) -> Vec<f64> {
    let mut s = vec![1.0];
    for _ in 0..order {
        let mut next = vec![0.0; s.len() + 1];
        for (i, c) in s.iter().enumerate() {
            next[i] -= c;
            next[i + 1] += c;
        }
        s = next;
    }
    s
}

#[derive(Debug, Clone)]
pub struct PenaltyModel {
    dim: usize,
    order: usize,
    eps: f64,
    d: DMatrix<f64>,
    p: DMatrix<f64>,
    e_diag: Vec<f64>,
    c: DMatrix<f64>,
}

/// Validated constructor for the second- and third-order penalties.
pub fn penalty_matrix(dim: usize, order: usize, eps: f64) -> Result<PenaltyModel> {
    let d = diff_matrix(dim, order)?;
    if dim < 2 * order + 1 {
        return Err(Error::InvalidDimension(format!(
            "a penalty of order {order} needs at least {} coefficients, got {dim}",
            2 * order + 1
        )));
    }
    PenaltyModel::from_difference(d, order, eps)
}

impl PenaltyModel {
    /// Builds `P = D'D + eps I` and the derived `E`, `C` from an arbitrary
    /// difference matrix. `order` is recorded for reporting only.
    pub fn from_difference(d: DMatrix<f64>, order: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidPerturbation(eps));
        }
        let dim = d.ncols();
        let dtd = d.transpose() * &d;
        let p = &dtd + DMatrix::identity(dim, dim) * eps;
        let e_diag: Vec<f64> = (0..dim).map(|k| 1.0 / p[(k, k)]).collect();
        let mut c = -dtd;
        for k in 0..dim {
            c[(k, k)] = 0.0;
        }
        for k in 0..dim {
            let e = e_diag[k];
            c.column_mut(k).scale_mut(e);
        }
        Ok(Self {
            dim,
            order,
            eps,
            d,
            p,
            e_diag,
            c,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn difference(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn c_matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `E(k,k) = 1 / z_r(k, eps)`.
    pub fn e(&self, k: usize) -> f64 {
        self.e_diag[k]
    }

    /// `z_r(k, eps)`, the `k`th diagonal entry of `P`.
    pub fn z(&self, k: usize) -> f64 {
        self.p[(k, k)]
    }

    /// `psi_r(theta_{-k}) = -sum_{j != k} P[k,j] theta_j`.
    pub fn psi(&self, theta: &[f64], k: usize) -> f64 {
        self.conditional_mean(theta, k) * self.z(k)
    }

    /// Conditional prior mean `C'(k, .) theta`.
    pub fn conditional_mean(&self, theta: &[f64], k: usize) -> f64 {
        self.c.column(k).iter().zip(theta).map(|(c, t)| c * t).sum()
    }

    /// `theta' P theta`.
    pub fn quadratic_form(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.dim {
            let mut row = 0.0;
            for i in 0..self.dim {
                row += self.p[(i, j)] * theta[i];
            }
            acc += row * theta[j];
        }
        acc
    }

    /// Gaussian conditional prior moments `(mean, variance)` of `theta_k`.
    pub fn conditional_prior_moments(&self, theta: &[f64], k: usize, lambda: f64) -> Result<(f64, f64)> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda,
            });
        }
        if k >= self.dim {
            return Err(Error::InvalidDimension(format!(
                "coefficient index {k} out of range for dimension {}",
                self.dim
            )));
        }
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: theta.len(),
            });
        }
        Ok((self.conditional_mean(theta, k), self.e(k) / lambda))
    }
}

pub fn conditional_prior_moments(theta: &[f64], k: usize, lambda: f64, pm: &PenaltyModel) -> Result<(f64, f64)> {
    pm.conditional_prior_moments(theta, k, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = DEFAULT_EPS;

    #[test]
    fn second_order_rows() {
        let d = diff_matrix(6, 2).unwrap();
        assert_eq!(d.shape(), (4, 6));
        for i in 0..4 {
            let row: Vec<f64> = d.row(i).iter().cloned().collect();
            let mut expect = vec![0.0; 6];
            expect[i..i + 3].copy_from_slice(&[1.0, -2.0, 1.0]);
            assert_eq!(row, expect);
        }
        let d = diff_matrix(3, 2).unwrap();
        assert_eq!(d.row(0).iter().cloned().collect::<Vec<_>>(), vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn third_order_rows() {
        let d = diff_matrix(7, 3).unwrap();
        assert_eq!(d.shape(), (4, 7));
        for i in 0..4 {
            assert_eq!(
                d.row(i).columns(i, 4).iter().cloned().collect::<Vec<_>>(),
                vec![-1.0, 3.0, -3.0, 1.0]
            );
            assert_eq!(d.row(i).iter().filter(|v| **v != 0.0).count(), 4);
        }
    }

    #[test]
    fn order_and_dimension_errors() {
        assert!(matches!(diff_matrix(10, 1), Err(Error::UnsupportedOrder(1))));
        assert!(matches!(diff_matrix(10, 4), Err(Error::UnsupportedOrder(4))));
        assert!(matches!(diff_matrix(2, 2), Err(Error::InvalidDimension(_))));
        assert!(matches!(penalty_matrix(5, 3, EPS), Err(Error::InvalidDimension(_))));
        assert!(matches!(penalty_matrix(10, 2, 0.0), Err(Error::InvalidPerturbation(_))));
        assert!(matches!(
            penalty_matrix(10, 2, -1.0),
            Err(Error::InvalidPerturbation(_))
        ));
    }

    #[test]
    fn diagonal_second_order() {
        let pm = penalty_matrix(10, 2, EPS).unwrap();
        let expect = [1.0, 5.0, 6.0, 6.0, 6.0, 6.0, 6.0, 6.0, 5.0, 1.0];
        for k in 0..10 {
            assert_eq!(pm.z(k), expect[k] + EPS);
        }
    }

    #[test]
    fn diagonal_third_order() {
        let pm = penalty_matrix(10, 3, EPS).unwrap();
        let expect = [1.0, 10.0, 19.0, 20.0, 20.0, 20.0, 20.0, 19.0, 10.0, 1.0];
        for k in 0..10 {
            assert_eq!(pm.z(k), expect[k] + EPS);
        }
    }

    #[test]
    fn precision_is_dtd_plus_ridge() {
        for (dim, r) in [(7, 2), (12, 3), (30, 2)] {
            let pm = penalty_matrix(dim, r, EPS).unwrap();
            let dtd = pm.difference().transpose() * pm.difference();
            let diff = pm.precision() - DMatrix::identity(dim, dim) * EPS - dtd;
            assert!(diff.iter().all(|v| v.abs() < 1e-15));
            assert_eq!(pm.precision(), &pm.precision().transpose());
            let eig = pm.precision().clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= EPS * (1.0 - 1e-6));
        }
    }

    #[test]
    fn zero_theta_moments() {
        let pm = penalty_matrix(10, 2, EPS).unwrap();
        let theta = vec![0.0; 10];
        for k in 0..10 {
            let (m, v) = pm.conditional_prior_moments(&theta, k, 2.5).unwrap();
            assert_eq!(m, 0.0);
            assert_eq!(v, pm.e(k) / 2.5);
        }
    }

    #[test]
    fn interior_psi_example() {
        let pm = penalty_matrix(10, 2, EPS).unwrap();
        let k = 4;
        let mut theta = vec![0.0; 10];
        theta[k - 2..=k + 2].copy_from_slice(&[1.0, 2.0, 0.0, 3.0, 4.0]);
        assert!((pm.psi(&theta, k) - 15.0).abs() < 1e-12);
        let (m, _) = pm.conditional_prior_moments(&theta, k, 1.0).unwrap();
        assert!((m - 15.0 / (6.0 + EPS)).abs() < 1e-14);
    }

    #[test]
    fn moments_reject_bad_lambda() {
        let pm = penalty_matrix(10, 2, EPS).unwrap();
        let theta = vec![0.0; 10];
        assert!(pm.conditional_prior_moments(&theta, 0, 0.0).is_err());
        assert!(pm.conditional_prior_moments(&theta, 0, -1.0).is_err());
        assert!(pm.conditional_prior_moments(&theta, 10, 1.0).is_err());
    }

    fn direct_mean(p: &DMatrix<f64>, theta: &[f64], k: usize) -> f64 {
        let s: f64 = (0..theta.len()).filter(|&j| j != k).map(|j| p[(k, j)] * theta[j]).sum();
        -s / p[(k, k)]
    }

    proptest! {
        #[test]
        fn moments_match_direct_formula(
            theta in proptest::collection::vec(-5.0f64..5.0, 30),
            lambda in 0.01f64..100.0,
            r in 2usize..=3,
        ) {
            let pm = penalty_matrix(30, r, EPS).unwrap();
            for k in 0..30 {
                let (m, v) = pm.conditional_prior_moments(&theta, k, lambda).unwrap();
                prop_assert!((m - direct_mean(pm.precision(), &theta, k)).abs() < 1e-12);
                prop_assert!((v - 1.0 / (lambda * pm.precision()[(k, k)])).abs() < 1e-12);
            }
        }

        #[test]
        fn prior_gradient_consistency(
            theta in proptest::collection::vec(-3.0f64..3.0, 20),
            lambda in 0.1f64..10.0,
            r in 2usize..=3,
        ) {
            // d/dtheta_k of -0.5 lambda theta'P theta equals lambda z_k (mean_k - theta_k).
            let pm = penalty_matrix(20, r, EPS).unwrap();
            let p = pm.precision();
            for k in 0..20 {
                let grad: f64 = -lambda * (0..20).map(|j| p[(k, j)] * theta[j]).sum::<f64>();
                let (m, _) = pm.conditional_prior_moments(&theta, k, lambda).unwrap();
                let via = lambda * pm.z(k) * (m - theta[k]);
                prop_assert!((grad - via).abs() < 1e-9 * (1.0 + grad.abs()));
            }
        }
    }
}

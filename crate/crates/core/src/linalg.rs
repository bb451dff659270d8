//! Cholesky helpers shared by the predictor, the entropy reward and the
//! field sampler.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower Cholesky factor of `A + jitter * I`.
#[derive(Debug, Clone)]
pub struct Factor {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L^-1 b`
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.l.solve_lower_triangular(b).expect("factor has a positive diagonal")
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.l.solve_lower_triangular(b).expect("factor has a positive diagonal")
    }

    /// `(L L^T)^-1 b`
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.solve_lower_vec(b);
        self.l.tr_solve_lower_triangular(&y).expect("factor has a positive diagonal")
    }
}

/// Factor `a + jitter * I`, multiplying the jitter by 10 up to `escalations`
/// times when the factorization fails.
pub fn cholesky_jittered(a: &DMatrix<f64>, jitter: f64, escalations: usize) -> Result<Factor> {
    assert!(a.is_square());
    let mut j = jitter;
    for attempt in 0..=escalations {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += j;
        }
        if let Some(ch) = nalgebra::linalg::Cholesky::new(m) {
            let l = ch.unpack();
            if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok(Factor { l, jitter: j });
            }
        }
        if attempt < escalations {
            j = if j > 0.0 { j * 10.0 } else { f64::EPSILON * a.diagonal().amax().max(1.0) };
        }
    }
    Err(Error::NotPositiveDefinite { jitter: j })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_solves_and_log_det() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky_jittered(&a, 0.0, 0).unwrap();
        assert!((f.log_det() - 8f64.ln()).abs() < 1e-12);
        let x = f.solve_vec(&DVector::from_vec(vec![1.0, 2.0]));
        let r = &a * &x - DVector::from_vec(vec![1.0, 2.0]);
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn escalation_rescues_semidefinite() {
        let a = DMatrix::from_element(3, 3, 1.0);
        assert!(cholesky_jittered(&a, 0.0, 0).is_err());
        let f = cholesky_jittered(&a, 1e-10, 2).unwrap();
        assert!(f.jitter >= 1e-10);
        let neg = DMatrix::from_diagonal_element(2, 2, -1.0);
        assert!(matches!(cholesky_jittered(&neg, 1e-6, 2), Err(Error::NotPositiveDefinite { .. })));
    }
}

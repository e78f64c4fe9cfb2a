//! Dense linear-algebra helpers shared by the Laplace and GP code.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

static CLAMPED_VARIANCES: AtomicUsize = AtomicUsize::new(0);

/// Number of predictive variances clamped at zero because of round-off.
pub fn clamped_variance_count() -> usize {
    CLAMPED_VARIANCES.load(Ordering::Relaxed)
}

pub(crate) fn clamp_variance(v: f64) -> f64 {
    if v < 0.0 {
        CLAMPED_VARIANCES.fetch_add(1, Ordering::Relaxed);
        0.0
    } else {
        v
    }
}

/// A Cholesky factor together with the diagonal jitter that was needed to obtain it.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub lower: DMatrix<f64>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L w = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Solves `(L Lᵀ) w = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let w = self.solve_lower(b);
        self.lower
            .tr_solve_lower_triangular(&w)
            .expect("cholesky factor has a positive diagonal")
    }

    /// Full inverse of the factored matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let linv = self.solve_lower_mat(&DMatrix::identity(n, n));
        linv.tr_mul(&linv)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

/// Cholesky factorization with a jitter ladder: on failure add
/// `1e-8 * mean(diag)` to the diagonal, escalating by 10x up to `1e-2 * mean(diag)`.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, context: &'static str) -> Result<JitteredCholesky> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
            context,
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("matrix to factorize ({context})")));
    }
    if n == 0 {
        return Ok(JitteredCholesky {
            lower: DMatrix::zeros(0, 0),
            jitter: 0.0,
        });
    }
    if let Some(c) = Cholesky::<f64, Dyn>::new(a.clone()) {
        return Ok(JitteredCholesky {
            lower: c.unpack(),
            jitter: 0.0,
        });
    }
    let scale = (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-12) {
        let jitter = rel * scale;
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::<f64, Dyn>::new(b) {
            return Ok(JitteredCholesky {
                lower: c.unpack(),
                jitter,
            });
        }
        rel *= 10.0;
    }
    Err(Error::Factorization { context })
}

/// Eigenvalues of a symmetric PSD matrix, negatives from round-off clamped to zero.
pub fn psd_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let eig = a.clone().symmetric_eigenvalues();
    let mut vals: Vec<f64> = eig.iter().map(|&v| v.max(0.0)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_psd_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = cholesky_with_jitter(&a, "test").unwrap();
        assert!(c.jitter > 0.0 && c.jitter <= 1e-2);
    }

    #[test]
    fn indefinite_matrix_fails_after_ladder() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_with_jitter(&a, "test"),
            Err(Error::Factorization { .. })
        ));
    }

    #[test]
    fn solve_and_logdet() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let c = cholesky_with_jitter(&a, "test").unwrap();
        assert!((c.logdet() - 8f64.ln()).abs() < 1e-12);
        let x = c.solve(&DVector::from_vec(vec![1.0, 2.0]));
        let back = &a * &x;
        assert!((back[0] - 1.0).abs() < 1e-12 && (back[1] - 2.0).abs() < 1e-12);
    }
}

//! Positive-definite factorization with a diagonal jitter ladder.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Relative jitter steps tried after a plain factorization fails, as
/// multiples of the kernel's prior variance.
pub const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Cholesky factor of a symmetric positive-definite matrix and the diagonal
/// jitter that was needed to obtain it.
#[derive(Clone, Debug)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

/// Factorizes `matrix`, adding `jitter * scale` to the diagonal along
/// [`JITTER_LADDER`] whenever the plain factorization fails.
pub fn factor_with_jitter(matrix: DMatrix<f64>, scale: f64) -> Result<Factor> {
    factor_until(matrix, scale, |_| true)
}

/// Like [`factor_with_jitter`], but also rejects factorizations for which
/// `accept` returns false, moving on to the next jitter step.
pub fn factor_until<F>(matrix: DMatrix<f64>, scale: f64, mut accept: F) -> Result<Factor>
where
    F: FnMut(&Factor) -> bool,
{
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        let f = Factor { chol, jitter: 0.0 };
        if accept(&f) {
            return Ok(f);
        }
    }
    for step in JITTER_LADDER {
        let jitter = step * scale;
        let mut m = matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            let f = Factor { chol, jitter };
            if accept(&f) {
                log::debug!("factorization needed diagonal jitter {jitter:e}");
                return Ok(f);
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
    })
}

/// Forces exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_factorization_needs_no_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = factor_with_jitter(m.clone(), 1.0).unwrap();
        assert_eq!(f.jitter, 0.0);
        let l = f.l();
        assert!((&l * l.transpose() - m).amax() < 1e-14);
        assert!((f.log_det() - (2.0f64 - 0.25).ln()).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_rescued_by_jitter() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let f = factor_with_jitter(m, 2.0).unwrap();
        assert!(f.jitter > 0.0);
        assert!(f.jitter <= 1e-4 * 2.0);
    }

    #[test]
    fn indefinite_matrix_fails_after_the_ladder() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            factor_with_jitter(m, 1.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn symmetrize_averages() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 1.0]);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 0)], 3.0);
    }
}

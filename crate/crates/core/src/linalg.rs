//! Small dense linear-algebra helpers: eigenvalues and matrix norms.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{dim, value, Result};

/// Convergence tolerance of the Schur (Hessenberg + shifted QR) iteration.
pub const EIGEN_TOLERANCE: f64 = 1e-12;
const EIGEN_MAX_ITER: usize = 100_000;

/// All eigenvalues of a square matrix, from its real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(dim(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(value("matrix has non-finite entries"));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), EIGEN_TOLERANCE, EIGEN_MAX_ITER)
        .ok_or_else(|| value("Schur iteration did not converge"))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Sum of absolute values of all entries.
pub fn entrywise_l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Maximum absolute column sum.
pub fn induced_l1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix norm used wherever a "2-norm" between parameter sets is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm2 {
    #[default]
    Spectral,
    Frobenius,
}

impl Norm2 {
    pub fn apply(self, m: &DMatrix<f64>) -> f64 {
        match self {
            Norm2::Spectral => spectral_norm(m),
            Norm2::Frobenius => frobenius_norm(m),
        }
    }
}

/// Matrix norm used wherever a "1-norm" between parameter sets is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm1 {
    #[default]
    Entrywise,
    Induced,
}

impl Norm1 {
    pub fn apply(self, m: &DMatrix<f64>) -> f64 {
        match self {
            Norm1::Entrywise => entrywise_l1(m),
            Norm1::Induced => induced_l1(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_of_known_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((spectral_norm(&m) - 4.0).abs() < 1e-12);
        assert!((frobenius_norm(&m) - 5.0).abs() < 1e-12);
        assert_eq!(entrywise_l1(&m), 7.0);
        assert_eq!(induced_l1(&m), 4.0);
    }

    #[test]
    fn eigenvalues_of_rotation_are_complex() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = eigenvalues(&m).unwrap();
        assert_eq!(ev.len(), 2);
        for e in ev {
            assert!((e.norm() - 1.0).abs() < 1e-12);
            assert!((e.im.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_square() {
        assert!(eigenvalues(&DMatrix::zeros(2, 3)).is_err());
        let mut m = DMatrix::<f64>::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(eigenvalues(&m).is_err());
    }
}

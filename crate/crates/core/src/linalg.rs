//! Small dense helpers for covariance matrices.

use nalgebra::{DMatrix, Matrix2, SMatrix};

use crate::{Error, Result};

/// `(M + Mᵀ) / 2`.
pub fn symmetrize<const D: usize>(m: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    (m + m.transpose()) * 0.5
}

/// Relative eigenvalue floor below which a matrix is rejected as non-PSD.
pub const PSD_TOL: f64 = 1e-10;

/// Eigen-decomposition `(λ, V)` of a symmetric matrix, rejecting eigenvalues
/// below `-PSD_TOL * max(trace, tiny)`.
fn checked_eigen<const D: usize>(m: &SMatrix<f64, D, D>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd("non-finite entry".into()));
    }
    let (values, vectors) = sym_eigen(m);
    let scale = m.trace().abs().max(f64::MIN_POSITIVE);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL * scale {
        return Err(Error::NotPsd(format!("eigenvalue {min:e} against trace {scale:e}")));
    }
    Ok((values, vectors))
}

fn sym_eigen<const D: usize>(m: &SMatrix<f64, D, D>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = DMatrix::from_column_slice(D, D, sym.as_slice()).symmetric_eigen();
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

fn recompose<const D: usize>(values: &[f64], vectors: &DMatrix<f64>) -> SMatrix<f64, D, D> {
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values));
    let full = vectors * diag * vectors.transpose();
    symmetrize(&SMatrix::<f64, D, D>::from_column_slice(full.as_slice()))
}

/// Check that `m` is symmetric (to 1e-9 relative) and positive semidefinite.
pub fn check_psd<const D: usize>(m: &SMatrix<f64, D, D>) -> Result<()> {
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    if asym > 1e-9 * scale {
        return Err(Error::NotPsd(format!("asymmetry {asym:e}")));
    }
    checked_eigen(m).map(|_| ())
}

/// Symmetric square root `S = V·diag(√λ)·Vᵀ`, so `S·Sᵀ = P`.
pub fn psd_sqrt<const D: usize>(p: &SMatrix<f64, D, D>) -> Result<SMatrix<f64, D, D>> {
    let (values, vectors) = checked_eigen(p)?;
    let root: Vec<f64> = values.iter().map(|l| l.max(0.0).sqrt()).collect();
    Ok(recompose(&root, &vectors))
}

/// Nearest PSD matrix in the Frobenius norm (negative eigenvalues clipped).
pub fn nearest_psd<const D: usize>(p: &SMatrix<f64, D, D>) -> SMatrix<f64, D, D> {
    let (values, vectors) = sym_eigen(p);
    let clipped: Vec<f64> = values.iter().map(|l| l.max(0.0)).collect();
    recompose(&clipped, &vectors)
}

/// True when every eigenvalue is above `-PSD_TOL * trace`.
pub fn is_psd<const D: usize>(m: &SMatrix<f64, D, D>) -> bool {
    checked_eigen(m).is_ok()
}

/// Largest eigenvalue of a symmetric 2×2 matrix (closed form, clamped at zero).
pub fn max_eigenvalue2(m: &Matrix2<f64>) -> f64 {
    let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean + rad).max(0.0)
}

/// Largest eigenvalue of a symmetric matrix of any size (clamped at zero).
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 2 {
        return max_eigenvalue2(&Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]));
    }
    if m.is_empty() {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max().max(0.0)
}

/// Unbiased sample covariance of equally weighted samples.
pub fn sample_covariance<const D: usize>(samples: &[SMatrix<f64, D, 1>]) -> SMatrix<f64, D, D> {
    let n = samples.len();
    if n < 2 {
        return SMatrix::zeros();
    }
    let mean = samples.iter().fold(SMatrix::<f64, D, 1>::zeros(), |acc, s| acc + s) / n as f64;
    let mut cov = SMatrix::<f64, D, D>::zeros();
    for s in samples {
        let d = s - mean;
        cov += d * d.transpose();
    }
    cov / (n - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    #[test]
    fn sqrt_reproduces_matrix() {
        let p = Matrix3::new(4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0);
        let s = psd_sqrt(&p).unwrap();
        assert!((s * s.transpose() - p).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let p = Matrix2::new(1.0, 2.0, 2.0, 1.0);
        assert!(psd_sqrt(&p).is_err());
        assert!(check_psd(&p).is_err());
        let q = nearest_psd(&p);
        assert!(check_psd(&q).is_ok());
    }

    #[test]
    fn closed_form_two_by_two_eigenvalue() {
        let m = Matrix2::new(5.0, 2.0, 2.0, 1.0);
        let reference = m.symmetric_eigenvalues().max();
        assert!((max_eigenvalue2(&m) - reference).abs() < 1e-12);
        let m3 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 9.0, 4.0]));
        assert!((max_eigenvalue(&m3) - 9.0).abs() < 1e-12);
    }
}

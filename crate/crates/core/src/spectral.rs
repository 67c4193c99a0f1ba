//! Spectral quantities used by diagnostics and the verification suite.

use nalgebra::DMatrix;

use crate::linalg::Mat;

fn to_na(a: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}

/// Largest singular value (operator 2-norm).
pub fn spectral_norm(a: &Mat) -> f64 {
    if a.rows() == 0 || a.cols() == 0 {
        return 0.0;
    }
    to_na(a).singular_values().max()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Mat) -> Vec<f64> {
    let mut ev: Vec<f64> = to_na(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `λ_max / λ_min` of a symmetric positive definite matrix.
pub fn condition_number(a: &Mat) -> f64 {
    let ev = symmetric_eigenvalues(a);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

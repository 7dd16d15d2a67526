//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Symmetric part `(M + M^T)/2`.
pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Hermitian part `(M + M^H)/2`.
pub fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = symmetric_part(m).symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn eig_min_symmetric(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m)[0]
}

pub fn eig_max_symmetric(m: &DMatrix<f64>) -> f64 {
    let ev = symmetric_eigenvalues(m);
    ev[ev.len() - 1]
}

/// Smallest eigenvalue of a complex Hermitian matrix (symmetrized first to
/// suppress roundoff asymmetry).
pub fn eig_min_hermitian(m: &DMatrix<Complex64>) -> f64 {
    let ev = hermitian_part(m).symmetric_eigenvalues();
    ev.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Solve `M X = B` by LU with partial pivoting.
pub fn solve_real(m: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(context.to_string()))
}

pub fn solve_complex(
    m: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    omega: f64,
    context: &'static str,
) -> Result<DMatrix<Complex64>> {
    m.clone()
        .lu()
        .solve(b)
        .ok_or(Error::SingularResolvent { omega, context })
}

/// Numerical rank: singular values below `rel_tol * sigma_max` count as zero.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.singular_values();
    let smax = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Frobenius norm of the asymmetry `M - M^T` relative to `‖M‖`.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

/// Project a symmetric matrix onto `{ S : S ⪰ floor·I }` by eigenvalue clipping.
pub fn clip_eigenvalues_min(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetric_part(m).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Negative part of a symmetric matrix: eigen-clip above zero and keep what
/// was removed (so `M = clip_neg(M) + positive part`).
pub fn negative_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetric_part(m).symmetric_eigen();
    let neg = eig.eigenvalues.map(|l| l.min(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&neg) * eig.eigenvectors.transpose()
}

/// Promote a real matrix to complex entries.
pub fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

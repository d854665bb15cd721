//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Smallest eigenvalue relative to the largest exceeds `rel_tol`.
pub fn is_positive_definite(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let ev = m.clone().symmetric_eigen().eigenvalues;
    let max = ev.max();
    max > 0.0 && ev.min() > rel_tol * max
}

/// Solves `m x = b` for symmetric positive semi-definite `m`, falling back to
/// the pseudo-inverse when Cholesky fails.
pub fn solve_psd(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    match m.clone().cholesky() {
        Some(c) => c.solve(b),
        None => pseudo_inverse(m) * b,
    }
}

/// Inverse of a symmetric PSD matrix, symmetrised; pseudo-inverse if singular.
pub fn psd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let inv = match m.clone().cholesky() {
        Some(c) => c.inverse(),
        None => pseudo_inverse(m),
    };
    (&inv + inv.transpose()) * 0.5
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cut = max * 1e-12 * m.nrows() as f64;
    let inv_vals = eig.eigenvalues.map(|v| if v > cut { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose()
}

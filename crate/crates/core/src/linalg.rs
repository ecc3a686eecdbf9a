//! Small dense linear-algebra helpers for symmetric PSD matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance on negative eigenvalues when checking positive semidefiniteness.
pub const PSD_TOL: f64 = 1e-10;

/// Eigenvalues in `[-SQRT_CLAMP, 0]` are clamped to zero when taking square roots.
pub const SQRT_CLAMP: f64 = 1e-12;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrized(m.clone())).eigenvalues.min()
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// Rejects non-square, asymmetric or indefinite input matrices.
pub fn check_psd(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!("`{name}` must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("`{name}` has non-finite entries")));
    }
    if !is_symmetric(m, 1e-9) {
        return Err(Error::InvalidParameter(format!("`{name}` must be symmetric")));
    }
    let min = min_eigenvalue(m);
    if min < -PSD_TOL {
        return Err(Error::NotPsd { name, min_eigenvalue: min });
    }
    Ok(())
}

/// Symmetric PSD square root via eigendecomposition.
pub fn psd_sqrt(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    check_psd(m, name)?;
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < -SQRT_CLAMP) {
        return Err(Error::NotPsd { name, min_eigenvalue: bad });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(symmetrized(v * DMatrix::from_diagonal(&roots) * v.transpose()))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
///
/// Eigenvalues at or below `tol * max_eigenvalue` are treated as zero.
pub fn pinv_psd(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    let cutoff = tol * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let inv = eig.eigenvalues.map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    let v = &eig.eigenvectors;
    symmetrized(v * DMatrix::from_diagonal(&inv) * v.transpose())
}

/// Orthonormal basis (as columns) of the null space of a symmetric PSD matrix.
pub fn null_space_psd(m: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    let cutoff = tol * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    eig.eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l <= cutoff)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect()
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `Tr(a * b)` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn quad_form(x: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

/// `log det` of a symmetric positive definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>, name: &'static str) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(symmetrized(m.clone()))
        .ok_or(Error::NotPsd { name, min_eigenvalue: min_eigenvalue(m) })?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// True when every eigenvalue of `a` has strictly negative real part.
pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    a.complex_eigenvalues().iter().all(|l| l.re < 0.0)
}

/// Stationary covariance: the solution of `A X + X A^T + D = 0` for Hurwitz `A`.
pub fn lyapunov_stationary(a: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_hurwitz(a) {
        return Err(Error::InvalidParameter("drift matrix is not Hurwitz; no stationary covariance exists".into()));
    }
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(A X) = (I ⊗ A) vec X, vec(X A^T) = (A ⊗ I) vec X.
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, d.iter().map(|v| -v));
    let sol = op.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    Ok(symmetrized(DMatrix::from_column_slice(n, n, sol.as_slice())))
}

pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

/// Builds a matrix from row-major nested vectors, as found in config files.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = psd_sqrt(&m, "m").unwrap();
        assert_relative_eq!(&r * r.transpose(), m, epsilon = 1e-10);
    }

    #[test]
    fn psd_sqrt_clamps_round_off_and_rejects_indefinite() {
        let tiny = diag(&[1.0, -5e-13]);
        let r = psd_sqrt(&tiny, "tiny").unwrap();
        assert_eq!(r[(1, 1)], 0.0);
        assert!(matches!(psd_sqrt(&diag(&[1.0, -1e-3]), "bad"), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn pseudo_inverse_identity() {
        let p = diag(&[2.0, 0.0]);
        let pd = pinv_psd(&p, 1e-12);
        assert_relative_eq!(&p * &pd * &p, p, epsilon = 1e-14);
        assert_eq!(pd[(1, 1)], 0.0);
        assert_relative_eq!(pd[(0, 0)], 0.5);
    }

    #[test]
    fn lyapunov_scalar_and_oscillator() {
        let a = diag(&[-0.5]);
        let d = diag(&[0.4]);
        assert_relative_eq!(lyapunov_stationary(&a, &d).unwrap()[(0, 0)], 0.4, epsilon = 1e-12);

        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.64, -0.4]);
        let d = diag(&[0.0, 0.4]);
        let x = lyapunov_stationary(&a, &d).unwrap();
        let resid = &a * &x + &x * a.transpose() + &d;
        assert!(resid.amax() < 1e-12);
        // Closed form for the damped oscillator: var(v) = eta / (2 gamma), var(x) = var(v) / omega^2.
        assert_relative_eq!(x[(1, 1)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(x[(0, 0)], 0.5 / 0.64, epsilon = 1e-12);
    }

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_relative_eq!(log_det_spd(&m, "m").unwrap(), (2.0f64 - 0.09).ln(), epsilon = 1e-12);
    }
}

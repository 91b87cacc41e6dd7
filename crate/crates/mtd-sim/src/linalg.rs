//! Small dense linear-algebra helpers used throughout the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Force exact symmetry: (M + Mᵀ)/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    out
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest eigenvalue magnitude of a square real matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Numerical rank from singular values with an absolute floor relative to
/// the largest singular value.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax.max(1.0)).count()
}

/// Rank of a complex matrix, same convention as [`rank`].
pub fn rank_complex(m: &DMatrix<nalgebra::Complex<f64>>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax.max(1.0)).count()
}

/// Cholesky factorization, failing with a domain error when the matrix is
/// not positive definite.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::numerical(format!("{what} is not positive definite")))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols() && (m.nrows() == 0 || Cholesky::new(m.clone()).is_some())
}

/// Solve M X = B through an existing Cholesky factor.
pub fn chol_solve_mat(chol: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    chol.solve_mut(&mut x);
    x
}

/// log det M from its Cholesky factor.
pub fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Condition number estimate from singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Fixed-point solve of the discrete Lyapunov equation X = M X Mᵀ + Q.
/// Requires the spectral radius of M to be below one.
pub fn solve_discrete_lyapunov(m: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::dim(format!(
            "lyapunov: M is {}x{}, Q is {}x{}",
            m.nrows(),
            m.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let rho = spectral_radius(m);
    if rho >= 1.0 {
        return Err(Error::numerical(format!(
            "lyapunov: spectral radius {rho:.6} >= 1, no stationary solution"
        )));
    }
    let mut x = symmetrize(q);
    for _ in 0..200_000 {
        let next = symmetrize(&(m * &x * m.transpose() + q));
        let delta = frobenius(&(&next - &x));
        x = next;
        if delta < 1e-13 * (1.0 + frobenius(&x)) {
            return Ok(x);
        }
    }
    Err(Error::numerical(
        "lyapunov: fixed-point iteration did not converge".to_string(),
    ))
}

/// Floor the eigenvalues of a symmetric matrix at `floor`, keeping the
/// eigenvectors. Used to repair indefinite sample estimates.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let v = eig.eigenvectors.column(i);
        out += vals[i] * &v * v.transpose();
    }
    symmetrize(&out)
}

/// Stack [upper; lower] vertically.
pub fn vstack_vec(upper: &DVector<f64>, lower: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(upper.len() + lower.len());
    out.rows_mut(0, upper.len()).copy_from(upper);
    out.rows_mut(upper.len(), lower.len()).copy_from(lower);
    out
}

/// Block-diagonal of two square matrices.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), (b.nrows(), b.ncols()))
        .copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_removes_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = symmetrize(&m);
        assert_eq!(s[(0, 1)], 2.5);
        assert_eq!(s[(1, 0)], 2.5);
        assert_eq!(frobenius(&(&s - &s.transpose())), 0.0);
    }

    #[test]
    fn spectral_radius_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -1.25]);
        assert!((spectral_radius(&m) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn rank_detects_deficiency() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank(&m, 1e-8), 1);
        let full = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(rank(&full, 1e-8), 2);
    }

    #[test]
    fn lyapunov_scalar_fixed_point() {
        // X = 0.5 X 0.5 + 3  =>  X = 4
        let m = DMatrix::from_row_slice(1, 1, &[0.5]);
        let q = DMatrix::from_row_slice(1, 1, &[3.0]);
        let x = solve_discrete_lyapunov(&m, &q).unwrap();
        assert!((x[(0, 0)] - 4.0).abs() < 1e-10);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let m = DMatrix::from_row_slice(1, 1, &[1.1]);
        let q = DMatrix::identity(1, 1);
        assert!(solve_discrete_lyapunov(&m, &q).is_err());
    }

    #[test]
    fn eigenvalue_floor_repairs_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let fixed = floor_eigenvalues(&m, 1e-10);
        assert!(is_positive_definite(&fixed));
    }
}

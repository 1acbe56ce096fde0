//! Small dense matrix kernel.
//!
//! Matrices are plain [`nalgebra::DMatrix`] values. Everything in scope is
//! tiny (n ≤ 50), so the Lyapunov solver goes through the vectorized
//! Kronecker system and eigenvalues come from nalgebra's real Schur form.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::LinalgError;

/// Dense real matrix, column-major storage.
pub type Mat = DMatrix<f64>;

/// Default margin used by [`is_hurwitz`] callers.
pub const HURWITZ_TOL: f64 = 1e-9;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;

/// Builds a matrix from row vectors, rejecting ragged rows and non-finite entries.
///
/// ```
/// let m = lqrflow::linalg::mat_from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
/// assert_eq!(m[(1, 0)], 3.0);
/// ```
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat, LinalgError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(LinalgError::RaggedRow {
                row: i,
                expected: ncols,
                found: row.len(),
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: i, col: j });
        }
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Row-major copy of the entries, the inverse of [`mat_from_rows`].
pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn check_finite(m: &Mat) -> Result<(), LinalgError> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(LinalgError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn require_square(m: &Mat, what: &'static str) -> Result<usize, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::Dimension {
            what,
            expected: (m.nrows(), m.nrows()),
            found: (m.nrows(), m.ncols()),
        });
    }
    Ok(m.nrows())
}

/// Real and imaginary parts of the eigenvalues of a square matrix.
pub fn eigenvalues(m: &Mat) -> Result<Vec<(f64, f64)>, LinalgError> {
    require_square(m, "eigenvalue input")?;
    check_finite(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), SCHUR_EPS, SCHUR_MAX_ITER)
        .ok_or(LinalgError::EigenNoConvergence)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect())
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &Mat) -> Result<f64, LinalgError> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, _)| re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every eigenvalue has real part below `-tol`.
pub fn is_hurwitz(m: &Mat, tol: f64) -> Result<bool, LinalgError> {
    Ok(spectral_abscissa(m)? < -tol)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &Mat) -> Result<Vec<f64>, LinalgError> {
    require_square(m, "symmetric eigenvalue input")?;
    check_finite(m)?;
    let eig = SymmetricEigen::try_new(symmetrize(m), SCHUR_EPS, SCHUR_MAX_ITER)
        .ok_or(LinalgError::EigenNoConvergence)?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Solves `A_clᵀ P + P A_cl + W = 0` for symmetric `P`.
///
/// The Kronecker operator `I ⊗ A_clᵀ + A_clᵀ ⊗ I` has eigenvalues
/// `λᵢ + λⱼ`; if any of those sums is numerically zero the solve is refused.
pub fn solve_lyapunov(a_cl: &Mat, w: &Mat) -> Result<Mat, LinalgError> {
    let n = require_square(a_cl, "Lyapunov operator")?;
    if w.shape() != (n, n) {
        return Err(LinalgError::Dimension {
            what: "Lyapunov right-hand side",
            expected: (n, n),
            found: w.shape(),
        });
    }
    check_finite(w)?;
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }

    let eig = eigenvalues(a_cl)?;
    let scale = a_cl.norm().max(1.0);
    let min_sum = eig
        .iter()
        .flat_map(|&(ar, ai)| eig.iter().map(move |&(br, bi)| (ar + br).hypot(ai + bi)))
        .fold(f64::INFINITY, f64::min);
    if min_sum <= 1e-12 * scale {
        let abscissa = eig.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        return Err(LinalgError::IllConditioned { abscissa });
    }

    let at = a_cl.transpose();
    let eye = Mat::identity(n, n);
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let lu = op.clone().lu();
    let rhs = -nalgebra::DVector::from_column_slice(w.as_slice());
    let mut x = lu.solve(&rhs).ok_or(LinalgError::IllConditioned {
        abscissa: eig.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max),
    })?;
    // one step of iterative refinement
    let resid = &rhs - &op * &x;
    if let Some(dx) = lu.solve(&resid) {
        x += dx;
    }
    let p = Mat::from_column_slice(n, n, x.as_slice());
    let p = symmetrize(&p);
    check_finite(&p)?;
    Ok(p)
}

/// Frobenius norm of `A_clᵀ P + P A_cl + W`.
pub fn lyapunov_residual(a_cl: &Mat, p: &Mat, w: &Mat) -> f64 {
    (a_cl.transpose() * p + p * a_cl + w).norm()
}

//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a symmetric matrix is treated as singular.
const SINGULAR_RTOL: f64 = 1e-13;

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)] != m[(j, i)] {
                return Err(Error::Asymmetric { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Averages `m` with its transpose; the result is symmetric to the bit.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            m[(i, i)]
        } else {
            0.5 * (m[(i, j)] + m[(j, i)])
        }
    })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Solves `a x = b` for symmetric `a`.
///
/// Cholesky first; on failure (indefinite or semi-definite input) falls back to
/// the eigendecomposition, which still works for indefinite but nonsingular `a`.
pub fn sym_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let eig = SymmetricEigen::new(a.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (min_abs, min_signed) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0), |(ma, ms), &v| {
            if v.abs() < ma {
                (v.abs(), v)
            } else {
                (ma, ms)
            }
        });
    if !(min_abs > SINGULAR_RTOL * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular {
            min_eigenvalue: min_signed,
        });
    }
    let proj = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter().zip(eig.eigenvalues.iter()).map(|(p, l)| p / l),
    );
    Ok(&eig.eigenvectors * scaled)
}

/// Rebuilds `m` with every eigenvalue below `floor` raised to `floor`.
///
/// Returns `m` unchanged (bit for bit) when no eigenvalue needs raising.
pub fn clamp_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return m.clone();
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clamped) * v.transpose()))
}

/// Inverse square root of a symmetric positive-definite matrix.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&v| v <= 0.0) {
        return Err(Error::Singular { min_eigenvalue: bad });
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&d) * v.transpose())))
}

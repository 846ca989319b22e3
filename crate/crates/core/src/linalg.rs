//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value floor below which a system is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

/// Ratio of extreme absolute eigenvalues of a symmetric matrix.
pub fn sym_condition_number(m: &DMatrix<f64>) -> f64 {
    let vals = sym_eigenvalues(m);
    let max = vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let min = vals.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Replaces eigenvalues below `floor` by `floor`. Returns the projected matrix
/// and whether anything was clipped.
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut clipped = false;
    let vals = eig.eigenvalues.map(|v| {
        if v < floor {
            clipped = true;
            floor
        } else {
            v
        }
    });
    if !clipped {
        return (m.clone(), false);
    }
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&vals) * v.transpose();
    (symmetrize(&out), true)
}

/// Square root factor `L` with `L Lᵀ = m` for a symmetric PSD matrix.
pub fn psd_factor(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = m.amax().max(1.0);
    let mut roots = DVector::zeros(m.nrows());
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v < -tol * scale {
            return Err(Error::invalid(format!(
                "matrix is not positive semidefinite (eigenvalue {v:.3e})"
            )));
        }
        roots[i] = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Solves the symmetric system `a x = b`, rejecting numerically singular `a`.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    if let Some(chol) = a.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let max = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        // cond(a) = cond(L)^2, the diagonal ratio is a cheap lower bound
        if max > 0.0 && (min / max).powi(2) > SINGULAR_RCOND {
            return Ok(chol.solve(b));
        }
    }
    // indefinite surrogates are allowed; fall back to an SVD solve with an rcond check
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax == 0.0 || smin / smax <= SINGULAR_RCOND {
        return Err(Error::singular(context.to_string()));
    }
    svd.solve(b, 0.0)
        .map_err(|_| Error::singular(context.to_string()))
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

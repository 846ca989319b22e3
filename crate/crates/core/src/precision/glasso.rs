//! Graphical lasso by block coordinate descent over columns of the
//! covariance estimate `W`, each column a lasso problem solved by
//! coordinate descent. Only off-diagonal entries are penalized.

use nalgebra::DMatrix;

use super::{CovarianceEstimate, Diagnostics, PrecisionEstimate, PrecisionMethod};
use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalue floor applied to indefinite inputs.
pub const EIGEN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        GlassoOptions {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Largest entrywise violation of the optimality conditions
/// `Γ - Θ⁻¹ + λ Z = 0`, `Z_jj = 0`, `Z_jk = sign(Θ_jk)` or `|Z_jk| ≤ 1` when `Θ_jk = 0`.
pub fn kkt_residual(gamma: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let w = theta
        .clone()
        .cholesky()
        .ok_or_else(|| Error::singular("precision estimate is not positive definite"))?
        .inverse();
    let p = gamma.nrows();
    let mut worst = 0.0_f64;
    for j in 0..p {
        for k in 0..p {
            let g = gamma[(j, k)] - w[(j, k)];
            let r = if j == k {
                g.abs()
            } else if theta[(j, k)] != 0.0 {
                (g + lambda * theta[(j, k)].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

/// Minimizes `tr(ΘΓ) - log det Θ + λ Σ_{j≠k} |Θ_jk|`.
///
/// Inputs with eigenvalues below `1e-8` are clipped first and flagged in
/// the diagnostics. Fails with `NotConverged` when the KKT residual is still
/// above `tol` after `max_iter` sweeps.
pub fn graphical_lasso(c: &CovarianceEstimate, lambda: f64, opts: GlassoOptions) -> Result<PrecisionEstimate> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("penalty {lambda} must be finite and non-negative")));
    }
    let p = c.p();
    if let Some(j) = (0..p).find(|&j| !(c.gamma[(j, j)] > 0.0)) {
        return Err(Error::invalid(format!("covariance diagonal entry {j} is not positive")));
    }
    let (gamma, clipped) = linalg::clip_eigenvalues(&linalg::symmetrize(&c.gamma), EIGEN_FLOOR);

    let mut w = gamma.clone();
    // beta[j] holds the lasso coefficients of column j over the other indices
    let mut beta = vec![vec![0.0; p.saturating_sub(1)]; p];
    let mut theta = DMatrix::zeros(p, p);
    let mut resid = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for j in 0..p {
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let b = &mut beta[j];
            let inner_tol = opts.tol * 1e-2;
            for _ in 0..10_000 {
                let mut delta = 0.0_f64;
                for (a, &ka) in others.iter().enumerate() {
                    let mut r = gamma[(ka, j)];
                    for (c, &kc) in others.iter().enumerate() {
                        if c != a {
                            r -= w[(ka, kc)] * b[c];
                        }
                    }
                    let new = soft(r, lambda) / w[(ka, ka)];
                    delta = delta.max((new - b[a]).abs());
                    b[a] = new;
                }
                if delta < inner_tol {
                    break;
                }
            }
            for &ka in &others {
                let v: f64 = others.iter().enumerate().map(|(c, &kc)| w[(ka, kc)] * b[c]).sum();
                w[(ka, j)] = v;
                w[(j, ka)] = v;
            }
        }
        theta = assemble(&w, &beta);
        match kkt_residual(&gamma, &theta, lambda) {
            Ok(r) => resid = r,
            Err(_) => continue,
        }
        if resid <= opts.tol {
            break;
        }
    }
    if !(resid <= opts.tol) {
        return Err(Error::NotConverged {
            iterations,
            kkt_residual: resid,
        });
    }
    Ok(PrecisionEstimate {
        theta,
        lambda,
        method: PrecisionMethod::GraphicalLasso,
        diagnostics: Diagnostics {
            iterations,
            kkt_residual: resid,
            clipped,
        },
    })
}

// Θ from the column regressions: θ_jj = 1/(W_jj - w_jᵀβ_j), θ_-j,j = -β_j θ_jj.
fn assemble(w: &DMatrix<f64>, beta: &[Vec<f64>]) -> DMatrix<f64> {
    let p = w.nrows();
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let fitted: f64 = others.iter().enumerate().map(|(a, &k)| w[(k, j)] * beta[j][a]).sum();
        let tjj = 1.0 / (w[(j, j)] - fitted);
        theta[(j, j)] = tjj;
        for (a, &k) in others.iter().enumerate() {
            theta[(k, j)] = -beta[j][a] * tjj;
        }
    }
    // keep exact zeros where either column regression dropped the entry
    for j in 0..p {
        for k in (j + 1)..p {
            let (a, b) = (theta[(j, k)], theta[(k, j)]);
            let v = if a == 0.0 || b == 0.0 { 0.0 } else { 0.5 * (a + b) };
            theta[(j, k)] = v;
            theta[(k, j)] = v;
        }
    }
    theta
}

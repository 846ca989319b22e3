//! Weighted squared-ℓ2 scores.
//!
//! The local score of node `j` with parent set `S` is the residual variance of
//! the best linear predictor of `X_j` from `X_S`, divided by the weight
//! `σ_j²`. A DAG's score is the sum of its local scores.

mod gap;
mod table;

pub use gap::{
    clique_gap_ratios, gap_additive, gap_ratio, gap_report, misspec_check, three_var_gap, two_var_gap,
    two_var_unweighted_condition, two_var_unweighted_threshold, GapReport, GapResult, GapSpace,
    GammaResult, MisspecReport, MAX_ENUMERATED_DAGS, MAX_FULL_SPACE_P,
};
pub use table::{
    build_score_table, subsets_up_to, EntryFlag, ScoreEntry, ScoreInput, ScoreSource, ScoreTable,
    ScoreTableFile, MAX_PARENTS_CAP,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::linalg;
use crate::precision::CovarianceEstimate;
use crate::sem::DataMatrix;

/// Positive per-node weights, the diagonal of `Ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((j, w)) = values.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("weight {j} = {w} must be positive")));
        }
        Ok(Weights(values))
    }

    pub fn homoscedastic(p: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|w| w * alpha).collect())
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_dims(cov: &DMatrix<f64>, w: &Weights) -> Result<()> {
    if !cov.is_square() || cov.nrows() != w.len() {
        return Err(Error::invalid(format!(
            "covariance is {}x{} but there are {} weights",
            cov.nrows(),
            cov.ncols(),
            w.len()
        )));
    }
    Ok(())
}

fn check_parents(p: usize, j: usize, s: &[usize]) -> Result<()> {
    if j >= p || s.iter().any(|&k| k >= p || k == j) {
        return Err(Error::invalid(format!("parent set {s:?} of node {j} out of range")));
    }
    Ok(())
}

/// `Σ_SS⁻¹ Σ_S,j`, the coefficients of the best linear predictor of `X_j` from `X_S`.
pub fn best_linear_coeffs(cov: &DMatrix<f64>, j: usize, s: &[usize]) -> Result<DVector<f64>> {
    check_parents(cov.nrows(), j, s)?;
    let css = linalg::submatrix(cov, s, s);
    let csj = DVector::from_iterator(s.len(), s.iter().map(|&k| cov[(k, j)]));
    linalg::solve_symmetric(&css, &csj, &format!("parent set {s:?} of node {j}"))
}

/// `Σ_jj - Σ_j,S Σ_SS⁻¹ Σ_S,j`.
pub fn residual_variance(cov: &DMatrix<f64>, j: usize, s: &[usize]) -> Result<f64> {
    let b = best_linear_coeffs(cov, j, s)?;
    let explained: f64 = s.iter().zip(b.iter()).map(|(&k, bk)| cov[(k, j)] * bk).sum();
    Ok(cov[(j, j)] - explained)
}

pub fn population_local_score(sigma: &DMatrix<f64>, w: &Weights, j: usize, s: &[usize]) -> Result<f64> {
    check_dims(sigma, w)?;
    Ok(residual_variance(sigma, j, s)?.max(0.0) / w.get(j))
}

/// Local score with a plug-in covariance; may be negative for indefinite surrogates.
pub fn corrupted_local_score(gamma: &CovarianceEstimate, w: &Weights, j: usize, s: &[usize]) -> Result<f64> {
    check_dims(&gamma.gamma, w)?;
    Ok(residual_variance(&gamma.gamma, j, s)? / w.get(j))
}

/// Ordinary least squares residual sum of squares over `n σ_j²`.
pub fn empirical_local_score(data: &DataMatrix, w: &Weights, j: usize, s: &[usize]) -> Result<f64> {
    data.require_complete()?;
    if data.p() != w.len() {
        return Err(Error::invalid("data and weights disagree on p"));
    }
    check_parents(data.p(), j, s)?;
    let n = data.n();
    let x = data.values();
    let y = x.column(j).into_owned();
    if s.is_empty() {
        return Ok(y.norm_squared() / (n as f64 * w.get(j)));
    }
    if s.len() > n {
        return Err(Error::singular(format!("parent set {s:?} larger than sample size")));
    }
    let xs = x.select_columns(s);
    let qr = xs.qr();
    let r = qr.r();
    let diag = r.diagonal();
    let max = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if max == 0.0 || min / max <= 1e-10 {
        return Err(Error::singular(format!("rank-deficient design for parent set {s:?} of node {j}")));
    }
    let q = qr.q();
    let fitted = &q * (q.transpose() * &y);
    let rss = (y - fitted).norm_squared();
    Ok(rss / (n as f64 * w.get(j)))
}

/// `Σ_j ((I - B)ᵀ Σ (I - B))_jj / σ_j²`.
pub fn score_matrix(sigma: &DMatrix<f64>, w: &Weights, b: &DMatrix<f64>) -> Result<f64> {
    check_dims(sigma, w)?;
    if b.shape() != sigma.shape() {
        return Err(Error::invalid("coefficient matrix has the wrong shape"));
    }
    let p = sigma.nrows();
    let a = DMatrix::identity(p, p) - b;
    let m = a.transpose() * sigma * &a;
    Ok((0..p).map(|j| m[(j, j)] / w.get(j)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagScore {
    pub score: f64,
    /// Column `j` holds the best linear coefficients of `X_j` on its parents.
    pub coefficients: DMatrix<f64>,
}

/// Minimum of [`score_matrix`] over matrices supported on `dag`.
pub fn score_dag(sigma: &DMatrix<f64>, w: &Weights, dag: &Dag) -> Result<DagScore> {
    check_dims(sigma, w)?;
    if dag.p() != w.len() {
        return Err(Error::invalid("DAG and weights disagree on p"));
    }
    let p = dag.p();
    let mut coefficients = DMatrix::zeros(p, p);
    let mut score = 0.0;
    for j in 0..p {
        let s = dag.parents(j);
        let b = best_linear_coeffs(sigma, j, s)?;
        for (&k, bk) in s.iter().zip(b.iter()) {
            coefficients[(k, j)] = *bk;
        }
        score += population_local_score(sigma, w, j, s)?;
    }
    Ok(DagScore { score, coefficients })
}

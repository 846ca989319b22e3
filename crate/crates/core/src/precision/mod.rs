//! Covariance and precision estimation from clean or corrupted samples, and
//! support recovery by thresholding.

mod glasso;

pub use glasso::{graphical_lasso, kkt_residual, GlassoOptions};

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UGraph;
use crate::linalg;
use crate::sem::{CorruptedData, Corruption, DataMatrix};

/// Largest condition number accepted by [`invert_covariance`].
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceSource {
    Clean,
    Additive,
    Missing,
}

/// A covariance estimate `Γ̂`. Corrupted sources may be indefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub gamma: DMatrix<f64>,
    pub source: CovarianceSource,
    pub n: usize,
}

impl CovarianceEstimate {
    pub fn p(&self) -> usize {
        self.gamma.nrows()
    }

    /// Wraps a known covariance matrix, e.g. a population `Σ`.
    pub fn exact(sigma: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&sigma, 1e-10) {
            return Err(Error::invalid("covariance matrix is not symmetric"));
        }
        Ok(CovarianceEstimate {
            gamma: sigma,
            source: CovarianceSource::Clean,
            n: 0,
        })
    }

    /// Smallest eigenvalue; negative for indefinite surrogates.
    pub fn min_eigenvalue(&self) -> f64 {
        linalg::sym_eigenvalues(&self.gamma).first().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMethod {
    DirectInverse,
    GraphicalLasso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    /// The input had eigenvalues below the floor and was projected.
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    pub theta: DMatrix<f64>,
    pub lambda: f64,
    pub method: PrecisionMethod,
    pub diagnostics: Diagnostics,
}

/// Metadata written next to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub lambda: f64,
    pub tol: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub source: CovarianceSource,
    pub method: PrecisionMethod,
    pub clipped: bool,
}

fn centered(values: &DMatrix<f64>, center: bool) -> DMatrix<f64> {
    if !center {
        return values.clone();
    }
    let mut x = values.clone();
    for mut col in x.column_iter_mut() {
        let observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        if observed.is_empty() {
            continue;
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    x
}

fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(x.transpose() * x / x.nrows() as f64))
}

/// `XᵀX / n`, after optional column centering.
pub fn sample_covariance(data: &DataMatrix, center: bool) -> Result<CovarianceEstimate> {
    data.require_complete()?;
    Ok(CovarianceEstimate {
        gamma: gram(&centered(data.values(), center)),
        source: CovarianceSource::Clean,
        n: data.n(),
    })
}

/// `ZᵀZ / n - Σ_w` for additively corrupted data.
pub fn surrogate_additive(z: &CorruptedData, center: bool) -> Result<CovarianceEstimate> {
    let Corruption::Additive { sigma_w } = &z.kind else {
        return Err(Error::invalid("expected additively corrupted data"));
    };
    z.observed.require_complete()?;
    let gamma = gram(&centered(z.observed.values(), center)) - sigma_w;
    Ok(CovarianceEstimate {
        gamma: linalg::symmetrize(&gamma),
        source: CovarianceSource::Additive,
        n: z.observed.n(),
    })
}

/// `(Z̃ᵀZ̃ / n) ⊙ M` with masked entries zero-filled; `M` has `1/(1-α)` on the
/// diagonal and `1/(1-α)²` elsewhere. Centering uses observed-entry means.
pub fn surrogate_missing(z: &CorruptedData, center: bool) -> Result<CovarianceEstimate> {
    let Corruption::Missing { alpha, mask } = &z.kind else {
        return Err(Error::invalid("expected data with missing entries"));
    };
    let alpha = *alpha;
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("missing probability {alpha} outside [0, 1)")));
    }
    if z.observed.n() == 0 {
        return Err(Error::invalid("data has no rows"));
    }
    let x = centered(z.observed.values(), center);
    let filled = x.zip_map(mask, |v, m| if m || v.is_nan() { 0.0 } else { v });
    let keep = 1.0 - alpha;
    let gamma = gram(&filled).map_with_location(|i, j, v| {
        if i == j {
            v / keep
        } else {
            v / (keep * keep)
        }
    });
    Ok(CovarianceEstimate {
        gamma,
        source: CovarianceSource::Missing,
        n: z.observed.n(),
    })
}

/// Dispatches to the surrogate matching the corruption kind.
pub fn surrogate_covariance(z: &CorruptedData, center: bool) -> Result<CovarianceEstimate> {
    match z.kind {
        Corruption::Additive { .. } => surrogate_additive(z, center),
        Corruption::Missing { .. } => surrogate_missing(z, center),
    }
}

/// `Θ̂ = Γ̂⁻¹`, refusing inputs with condition number above [`MAX_CONDITION`].
pub fn invert_covariance(c: &CovarianceEstimate) -> Result<PrecisionEstimate> {
    let p = c.p();
    let cond = linalg::sym_condition_number(&c.gamma);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::singular(format!("covariance condition number {cond:.3e}")));
    }
    let inv = c
        .gamma
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::singular("covariance inverse"))?;
    let theta = linalg::symmetrize(&inv);
    let resid = (&theta * &c.gamma - DMatrix::<f64>::identity(p, p)).amax();
    Ok(PrecisionEstimate {
        theta,
        lambda: 0.0,
        method: PrecisionMethod::DirectInverse,
        diagnostics: Diagnostics {
            iterations: 0,
            kkt_residual: resid,
            clipped: false,
        },
    })
}

/// Edge `{j, k}` iff `|Θ̂_jk| > tau`.
pub fn threshold_support(theta: &DMatrix<f64>, tau: f64) -> Result<UGraph> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("threshold {tau} must be positive")));
    }
    let p = theta.nrows();
    let mut edges = Vec::new();
    for j in 0..p {
        for k in (j + 1)..p {
            if theta[(j, k)].abs() > tau || theta[(k, j)].abs() > tau {
                edges.push((j, k));
            }
        }
    }
    UGraph::from_edges(p, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `τ = c0 σ² √(p/n)`
    LowDim,
    /// `τ = c0 σ² √(ln p / n)`
    HighDim,
}

impl Regime {
    /// Low-dimensional when `n ≥ p`.
    pub fn for_size(n: usize, p: usize) -> Self {
        if n >= p {
            Regime::LowDim
        } else {
            Regime::HighDim
        }
    }
}

pub fn default_threshold(n: usize, p: usize, sigma_sq: f64, c0: f64, regime: Regime) -> Result<f64> {
    if n == 0 || p == 0 {
        return Err(Error::invalid("threshold needs n >= 1 and p >= 1"));
    }
    if !(sigma_sq > 0.0 && c0 > 0.0) {
        return Err(Error::invalid("threshold needs positive sigma^2 and c0"));
    }
    let rate = match regime {
        Regime::LowDim => p as f64 / n as f64,
        Regime::HighDim => (p as f64).ln().max(f64::MIN_POSITIVE) / n as f64,
    };
    Ok(c0 * sigma_sq * rate.sqrt())
}

/// Dense matrix as CSV, no header.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let d = DataMatrix::read_csv(reader)?;
    d.require_complete()?;
    Ok(d.values().clone())
}

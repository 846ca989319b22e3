//! End-to-end estimation: covariance, moralized graph, score table, search,
//! pruning, and the run report tying them together.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dag, GraphFile, UGraph};
use crate::precision::{
    default_threshold, graphical_lasso, invert_covariance, sample_covariance, surrogate_covariance,
    threshold_support, CovarianceEstimate, CovarianceSource, GlassoOptions, PrecisionEstimate,
    PrecisionMethod, Regime,
};
use crate::scoring::{best_linear_coeffs, build_score_table, ScoreInput, ScoreTable, Weights, MAX_PARENTS_CAP};
use crate::search::{best_dag, SearchMethod, SearchStats};
use crate::sem::{corrupt_additive, corrupt_missing, CorruptedData, DataMatrix, LinearSem, NoiseSpec};

/// Bumped whenever a field of [`RunReport`] changes meaning or disappears.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Default multiplier for the automatic support threshold.
pub const DEFAULT_C0: f64 = 5.0;

/// Tolerance of the report self-consistency check.
pub const SCORE_CHECK_TOL: f64 = 1e-9;

/// Independent seed for a named consumer of the run seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    // FNV-1a of the name, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorruptionSpec {
    None,
    /// Rows of the known noise covariance.
    Additive { sigma_w: Vec<Vec<f64>> },
    Missing { alpha: f64 },
}

impl CorruptionSpec {
    pub fn additive(sigma_w: &DMatrix<f64>) -> Self {
        CorruptionSpec::Additive {
            sigma_w: sigma_w.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    fn sigma_w(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("noise covariance must be square"));
        }
        Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// 0 when `n ≥ 2p`, else `0.5 √(ln p / n)` times the median diagonal of `Γ̂`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    /// `c0 σ² √(rate)` with the rate picked by the sample-size regime.
    Auto { c0: f64 },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub corruption: CorruptionSpec,
    pub lambda: Penalty,
    pub tau: Threshold,
    pub center: bool,
    /// Noise scale in the automatic threshold; defaults to the largest error
    /// variance when known, else the largest `1/Θ̂_jj`.
    pub sigma_sq: Option<f64>,
    pub glasso_tol: f64,
    pub glasso_max_iter: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        let g = GlassoOptions::default();
        EstimateConfig {
            corruption: CorruptionSpec::None,
            lambda: Penalty::Auto,
            tau: Threshold::Auto { c0: DEFAULT_C0 },
            center: true,
            sigma_sq: None,
            glasso_tol: g.tol,
            glasso_max_iter: g.max_iter,
        }
    }
}

/// Error-variance vectors used as score weights. Several candidates are scored
/// side by side; the first one drives the reported DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaSource {
    Homoscedastic(f64),
    Candidates(Vec<Vec<f64>>),
}

impl OmegaSource {
    pub fn weights(&self, p: usize) -> Result<Vec<Weights>> {
        match self {
            OmegaSource::Homoscedastic(v) => Ok(vec![Weights::homoscedastic(p, *v)?]),
            OmegaSource::Candidates(list) => {
                if list.is_empty() {
                    return Err(Error::invalid("omega candidate list is empty"));
                }
                list.iter()
                    .map(|w| {
                        if w.len() != p {
                            return Err(Error::invalid(format!(
                                "omega candidate has {} entries, data has {p} columns",
                                w.len()
                            )));
                        }
                        Weights::new(w.clone())
                    })
                    .collect()
            }
        }
    }

    fn max_first(&self, p: usize) -> Result<f64> {
        Ok(self.weights(p)?[0].max())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Defaults to the maximum degree of the search graph.
    pub max_parents: Option<usize>,
    pub method: SearchMethod,
    pub treewidth_cap: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_parents: None,
            method: SearchMethod::Auto,
            treewidth_cap: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub estimate: EstimateConfig,
    pub omega: OmegaSource,
    pub search: SearchConfig,
    /// Coefficient magnitude below which learned edges are dropped.
    pub prune: Option<f64>,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(omega: OmegaSource) -> Self {
        PipelineConfig {
            estimate: EstimateConfig::default(),
            omega,
            search: SearchConfig::default(),
            prune: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Threshold::Fixed(t) = self.estimate.tau {
            if !(t > 0.0) {
                return Err(Error::invalid(format!("tau = {t} must be positive")));
            }
        }
        if let Threshold::Auto { c0 } = self.estimate.tau {
            if !(c0 > 0.0) {
                return Err(Error::invalid(format!("c0 = {c0} must be positive")));
            }
        }
        if let Penalty::Fixed(l) = self.estimate.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lambda = {l} must be non-negative")));
            }
        }
        if self.search.treewidth_cap == 0 {
            return Err(Error::invalid("treewidth cap must be positive"));
        }
        if let Some(k) = self.search.max_parents {
            if k > MAX_PARENTS_CAP {
                return Err(Error::invalid(format!("max parents {k} above the cap {MAX_PARENTS_CAP}")));
            }
        }
        if let Some(t) = self.prune {
            if !(t >= 0.0) {
                return Err(Error::invalid(format!("prune threshold {t} must be non-negative")));
            }
        }
        if self.estimate.glasso_max_iter == 0 || !(self.estimate.glasso_tol > 0.0) {
            return Err(Error::invalid("graphical lasso tolerance and iteration cap must be positive"));
        }
        Ok(())
    }
}

/// Clean samples and what was actually observed.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub clean: DataMatrix,
    pub observed: DataMatrix,
}

/// Samples `n` rows from `sem` and applies the corruption.
pub fn simulate(sem: &LinearSem, n: usize, noise: &NoiseSpec, corruption: &CorruptionSpec, seed: u64) -> Result<Simulation> {
    let clean = sem.sample(n, noise, substream(seed, "sample"))?;
    let observed = match corruption {
        CorruptionSpec::None => clean.clone(),
        CorruptionSpec::Additive { sigma_w } => {
            let sw = CorruptionSpec::sigma_w(sigma_w)?;
            corrupt_additive(&clean, &sw, substream(seed, "corrupt"))?.observed
        }
        CorruptionSpec::Missing { alpha } => corrupt_missing(&clean, *alpha, substream(seed, "corrupt"))?.observed,
    };
    Ok(Simulation { clean, observed })
}

/// Covariance estimate matching the corruption mechanism.
pub fn estimate_covariance(data: &DataMatrix, corruption: &CorruptionSpec, center: bool) -> Result<CovarianceEstimate> {
    if data.n() == 0 || data.p() == 0 {
        return Err(Error::invalid("data matrix is empty"));
    }
    match corruption {
        CorruptionSpec::None => sample_covariance(data, center),
        CorruptionSpec::Additive { sigma_w } => {
            let z = CorruptedData::additive(data.clone(), CorruptionSpec::sigma_w(sigma_w)?)?;
            surrogate_covariance(&z, center)
        }
        CorruptionSpec::Missing { alpha } => {
            let mask = data.missing_mask();
            if let Some(j) = (0..data.p()).find(|&j| mask.column(j).iter().all(|&m| m)) {
                return Err(Error::invalid(format!("column {j} has no observed entries")));
            }
            surrogate_covariance(&CorruptedData::missing(data.clone(), *alpha)?, center)
        }
    }
}

pub fn resolve_lambda(cov: &CovarianceEstimate, penalty: Penalty) -> f64 {
    match penalty {
        Penalty::Fixed(l) => l,
        Penalty::Auto => {
            let (n, p) = (cov.n, cov.p());
            if n == 0 || n >= 2 * p {
                return 0.0;
            }
            let mut diag: Vec<f64> = cov.gamma.diagonal().iter().copied().collect();
            diag.sort_by(f64::total_cmp);
            let mid = diag.len() / 2;
            let median = if diag.len().is_multiple_of(2) {
                0.5 * (diag[mid - 1] + diag[mid])
            } else {
                diag[mid]
            };
            0.5 * ((p as f64).ln() / n as f64).sqrt() * median
        }
    }
}

/// Direct inverse for an unpenalized problem with enough samples, otherwise
/// the graphical lasso.
pub fn estimate_precision(cov: &CovarianceEstimate, lambda: f64, opts: GlassoOptions) -> Result<PrecisionEstimate> {
    let enough = cov.n == 0 || cov.n >= cov.p();
    if lambda == 0.0 && enough {
        invert_covariance(cov)
    } else {
        graphical_lasso(cov, lambda, opts)
    }
}

#[derive(Debug, Clone)]
pub struct MoralizeOutcome {
    pub covariance: CovarianceEstimate,
    pub precision: PrecisionEstimate,
    pub tau: f64,
    pub graph: UGraph,
}

/// Estimates the moralized graph as the thresholded support of `Θ̂`.
/// `noise_scale` is the largest error variance when one is known.
pub fn moralize_estimate(data: &DataMatrix, cfg: &EstimateConfig, noise_scale: Option<f64>) -> Result<MoralizeOutcome> {
    let covariance = estimate_covariance(data, &cfg.corruption, cfg.center)?;
    moralize_from_covariance(covariance, cfg, noise_scale)
}

pub fn moralize_from_covariance(
    covariance: CovarianceEstimate,
    cfg: &EstimateConfig,
    noise_scale: Option<f64>,
) -> Result<MoralizeOutcome> {
    let lambda = resolve_lambda(&covariance, cfg.lambda);
    let opts = GlassoOptions {
        tol: cfg.glasso_tol,
        max_iter: cfg.glasso_max_iter,
    };
    let precision = estimate_precision(&covariance, lambda, opts)?;
    let tau = match cfg.tau {
        Threshold::Fixed(t) => t,
        Threshold::Auto { c0 } => {
            if covariance.n == 0 {
                return Err(Error::invalid("an exact covariance needs an explicit threshold"));
            }
            let sigma_sq = match cfg.sigma_sq.or(noise_scale) {
                Some(s) => s,
                None => precision
                    .theta
                    .diagonal()
                    .iter()
                    .map(|d| 1.0 / d)
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            let (n, p) = (covariance.n, covariance.p());
            default_threshold(n, p, sigma_sq, c0, Regime::for_size(n, p))?
        }
    };
    let graph = threshold_support(&precision.theta, tau)?;
    Ok(MoralizeOutcome {
        covariance,
        precision,
        tau,
        graph,
    })
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub table: ScoreTable,
    pub dag: Dag,
    pub score: f64,
    pub stats: SearchStats,
}

/// Builds the score table on `g` and returns its minimum-score DAG.
pub fn learn(cov: &CovarianceEstimate, g: &UGraph, w: &Weights, cfg: &SearchConfig) -> Result<LearnOutcome> {
    let max_parents = cfg.max_parents.unwrap_or(g.max_degree().min(MAX_PARENTS_CAP));
    let table = build_score_table(ScoreInput::Covariance(cov), w, g, max_parents)?;
    let (dag, score, stats) = best_dag(&table, g, cfg.method, cfg.treewidth_cap)?;
    match table.score_dag(&dag) {
        Some(s) if (s - score).abs() <= SCORE_CHECK_TOL * s.abs().max(1.0) => {}
        _ => return Err(Error::singular("selected DAG does not rescore to the reported value")),
    }
    Ok(LearnOutcome { table, dag, score, stats })
}

/// Drops every edge whose regression coefficient, fitted on the DAG's own
/// parent sets, is smaller in magnitude than `threshold`.
pub fn prune_dag(cov: &DMatrix<f64>, dag: &Dag, threshold: f64) -> Result<Dag> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid(format!("prune threshold {threshold} must be non-negative")));
    }
    if cov.nrows() != dag.p() {
        return Err(Error::invalid("covariance and DAG disagree on p"));
    }
    let mut parents = Vec::with_capacity(dag.p());
    for j in 0..dag.p() {
        let pa = dag.parents(j);
        if pa.is_empty() || threshold == 0.0 {
            parents.push(pa.to_vec());
            continue;
        }
        let coef = best_linear_coeffs(cov, j, pa)?;
        parents.push(
            pa.iter()
                .zip(coef.iter())
                .filter(|(_, c)| c.abs() >= threshold)
                .map(|(&k, _)| k)
                .collect(),
        );
    }
    Dag::from_parents(parents)
}

/// One tenth of the smallest nonzero coefficient magnitude of a known SEM.
pub fn oracle_prune_threshold(sem: &LinearSem) -> Option<f64> {
    let min = sem
        .weights()
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min);
    min.is_finite().then_some(0.1 * min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub source: CovarianceSource,
    pub method: PrecisionMethod,
    pub lambda: f64,
    pub tau: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub clipped: bool,
    pub min_eigenvalue: f64,
}

impl EstimateSummary {
    pub fn from_outcome(m: &MoralizeOutcome) -> Self {
        EstimateSummary {
            source: m.covariance.source,
            method: m.precision.method,
            lambda: m.precision.lambda,
            tau: m.tau,
            iterations: m.precision.diagnostics.iterations,
            kkt_residual: m.precision.diagnostics.kkt_residual,
            clipped: m.precision.diagnostics.clipped,
            min_eigenvalue: m.covariance.min_eigenvalue(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub omega: Vec<f64>,
    pub score: f64,
    pub dag: GraphFile,
}

/// Machine-readable record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub n: Option<usize>,
    pub p: usize,
    pub estimate: Option<EstimateSummary>,
    pub moral_graph: Option<GraphFile>,
    pub dag: Option<GraphFile>,
    pub score: Option<f64>,
    pub candidates: Vec<CandidateScore>,
    pub search: Option<SearchStats>,
    pub prune_threshold: Option<f64>,
    pub pruned_dag: Option<GraphFile>,
    /// Wall-clock milliseconds per stage; the only nondeterministic field.
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, config: serde_json::Value, p: usize) -> Self {
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            n: None,
            p,
            estimate: None,
            moral_graph: None,
            dag: None,
            score: None,
            candidates: Vec::new(),
            search: None,
            prune_threshold: None,
            pruned_dag: None,
            timings_ms: BTreeMap::new(),
        }
    }

    /// Rescoring the reported DAG with `table` reproduces the reported score.
    pub fn check_score(&self, table: &ScoreTable) -> Result<()> {
        let (Some(dag), Some(score)) = (&self.dag, self.score) else {
            return Ok(());
        };
        let dag = dag.to_dag()?;
        match table.score_dag(&dag) {
            Some(s) if (s - score).abs() <= SCORE_CHECK_TOL => Ok(()),
            other => Err(Error::invalid(format!(
                "reported score {score} but the table gives {other:?}"
            ))),
        }
    }
}

/// Everything produced by a full run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub moral: MoralizeOutcome,
    pub learned: LearnOutcome,
    pub candidates: Vec<CandidateScore>,
    pub pruned: Option<Dag>,
    pub report: RunReport,
}

/// Estimate the moralized graph, learn the minimum-score DAG on it for every
/// omega candidate, and optionally prune the first candidate's DAG.
pub fn run_pipeline(data: &DataMatrix, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let p = data.p();
    let weights = cfg.omega.weights(p)?;
    let mut timings = BTreeMap::new();

    let t = std::time::Instant::now();
    let moral = moralize_estimate(data, &cfg.estimate, Some(cfg.omega.max_first(p)?))?;
    timings.insert("moralize".to_string(), ms(t));

    let t = std::time::Instant::now();
    let mut learned: Option<LearnOutcome> = None;
    let mut candidates = Vec::with_capacity(weights.len());
    for w in &weights {
        let out = learn(&moral.covariance, &moral.graph, w, &cfg.search)?;
        candidates.push(CandidateScore {
            omega: w.as_slice().to_vec(),
            score: out.score,
            dag: GraphFile::from(&out.dag),
        });
        if learned.is_none() {
            learned = Some(out);
        }
    }
    let learned = learned.expect("at least one omega candidate");
    timings.insert("learn".to_string(), ms(t));

    let pruned = match cfg.prune {
        Some(th) => {
            let t = std::time::Instant::now();
            let d = prune_dag(&moral.covariance.gamma, &learned.dag, th)?;
            timings.insert("prune".to_string(), ms(t));
            Some(d)
        }
        None => None,
    };

    let mut report = RunReport::new("pipeline", serde_json::to_value(cfg)?, p);
    report.n = Some(data.n());
    report.estimate = Some(EstimateSummary::from_outcome(&moral));
    report.moral_graph = Some(GraphFile::from(&moral.graph));
    report.dag = Some(GraphFile::from(&learned.dag));
    report.score = Some(learned.score);
    report.candidates = candidates.clone();
    report.search = Some(learned.stats.clone());
    report.prune_threshold = cfg.prune;
    report.pruned_dag = pruned.as_ref().map(GraphFile::from);
    report.timings_ms = timings;
    report.check_score(&learned.table)?;

    Ok(PipelineOutcome {
        moral,
        learned,
        candidates,
        pruned,
        report,
    })
}

fn ms(t: std::time::Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

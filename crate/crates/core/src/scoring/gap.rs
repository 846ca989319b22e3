//! Identifiability margins: the additive gap between the true DAG and the
//! best competitor not containing it, the per-node gap ratio, closed forms
//! for two- and three-node DAGs, and the variance misspecification check.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_score_table, score_dag, ScoreInput, ScoreTable, Weights, MAX_PARENTS_CAP};
use crate::error::{Error, Result};
use crate::linalg;
use crate::graph::{clique_decomposition, enumerate_consistent_dags, mask_to_vec, Dag, GraphFile, UGraph};

/// Gaps over every DAG are only enumerated up to this many nodes.
pub const MAX_FULL_SPACE_P: usize = 6;
/// Refuse enumerations that visit more DAGs than this.
pub const MAX_ENUMERATED_DAGS: usize = 5_000_000;
const MAX_PAIR_EVALUATIONS: usize = 200_000_000;
const CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq)]
pub enum GapSpace {
    /// Every DAG on the node set.
    All,
    /// DAGs whose skeleton lies in this graph.
    Restricted(UGraph),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    /// `+∞` when every enumerated DAG contains the reference DAG.
    pub xi: f64,
    pub argmin: Option<Dag>,
    pub examined: usize,
    pub competitors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaResult {
    /// `+∞` when there is no competitor.
    pub gamma: f64,
    pub argmin: Option<Dag>,
    pub competitors: usize,
    pub supergraphs: usize,
}

fn contains(masks: &[u64], reference: &[u64]) -> bool {
    masks.iter().zip(reference).all(|(m, r)| m & r == *r)
}

fn edge_key(masks: &[u64]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = masks
        .iter()
        .enumerate()
        .flat_map(|(to, &m)| mask_to_vec(m).into_iter().map(move |from| (from, to)))
        .collect();
    edges.sort_unstable();
    edges
}

// Smaller value wins; exact ties go to the lexicographically smaller edge list.
fn pick<'a>(a: (f64, &'a [u64]), b: (f64, &'a [u64])) -> (f64, &'a [u64]) {
    if a.0 < b.0 || (a.0 == b.0 && edge_key(a.1) <= edge_key(b.1)) {
        a
    } else {
        b
    }
}

fn space_graph(p: usize, space: &GapSpace) -> Result<UGraph> {
    match space {
        GapSpace::All => {
            if p > MAX_FULL_SPACE_P {
                return Err(Error::CapExceeded(format!(
                    "gap over all DAGs is limited to p <= {MAX_FULL_SPACE_P}, got p = {p}"
                )));
            }
            Ok(UGraph::complete(p))
        }
        GapSpace::Restricted(g) => {
            if g.p() != p {
                return Err(Error::invalid("search graph and DAG disagree on p"));
            }
            Ok(g.clone())
        }
    }
}

fn population_table(sigma: &DMatrix<f64>, w: &Weights, g: &UGraph) -> Result<ScoreTable> {
    let deg = g.max_degree();
    if deg > MAX_PARENTS_CAP {
        return Err(Error::CapExceeded(format!(
            "maximum degree {deg} exceeds the parent-set cap {MAX_PARENTS_CAP}"
        )));
    }
    build_score_table(ScoreInput::Population(sigma), w, g, deg)
}

// Streams the DAG space in chunks, handing each chunk to `f`.
fn for_each_chunk(g: &UGraph, mut f: impl FnMut(&[Vec<u64>]) -> Result<()>) -> Result<usize> {
    let mut it = enumerate_consistent_dags(g)?;
    let mut buf: Vec<Vec<u64>> = Vec::with_capacity(CHUNK);
    let mut total = 0usize;
    while let Some(m) = it.next_masks() {
        total += 1;
        if total > MAX_ENUMERATED_DAGS {
            return Err(Error::CapExceeded(format!("more than {MAX_ENUMERATED_DAGS} DAGs to enumerate")));
        }
        buf.push(m.to_vec());
        if buf.len() == CHUNK {
            f(&buf)?;
            buf.clear();
        }
    }
    if !buf.is_empty() {
        f(&buf)?;
    }
    Ok(total)
}

/// `min { score(G) - score(G0) : G in the space, G ⊉ G0 }`.
pub fn gap_additive(sigma: &DMatrix<f64>, w: &Weights, dag0: &Dag, space: &GapSpace) -> Result<GapResult> {
    let p = dag0.p();
    let g = space_graph(p, space)?;
    let table = population_table(sigma, w, &g)?;
    let s0 = score_dag(sigma, w, dag0)?.score;
    let m0 = dag0.parent_masks();
    let mut best: Option<(f64, Vec<u64>)> = None;
    let mut competitors = 0usize;
    let examined = for_each_chunk(&g, |chunk| {
        let local = chunk
            .par_iter()
            .filter(|m| !contains(m, &m0))
            .filter_map(|m| table.score_masks(m).map(|s| (s - s0, m.as_slice())))
            .reduce_with(pick);
        competitors += chunk.iter().filter(|m| !contains(m, &m0)).count();
        if let Some((v, m)) = local {
            best = Some(match best.take() {
                Some((bv, bm)) => {
                    let (v2, m2) = pick((bv, &bm), (v, m));
                    (v2, m2.to_vec())
                }
                None => (v, m.to_vec()),
            });
        }
        Ok(())
    })?;
    Ok(match best {
        Some((xi, m)) => GapResult {
            xi,
            argmin: Some(Dag::from_masks_unchecked(&m)),
            examined,
            competitors,
        },
        None => GapResult {
            xi: f64::INFINITY,
            argmin: None,
            examined,
            competitors,
        },
    })
}

/// Number of nodes whose parent sets differ.
fn differing(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// `min_{G ⊉ G0} max_{G1 ⊇ G0} (score(G) - score(G1)) / |H(G, G1)|` over DAGs
/// consistent with `g`, where `H` is the set of nodes with differing parents.
pub fn gap_ratio(sigma: &DMatrix<f64>, w: &Weights, dag0: &Dag, g: &UGraph) -> Result<GammaResult> {
    let p = dag0.p();
    if g.p() != p {
        return Err(Error::invalid("search graph and DAG disagree on p"));
    }
    let table = population_table(sigma, w, g)?;
    let m0 = dag0.parent_masks();
    let mut supers: Vec<(Vec<u64>, f64)> = Vec::new();
    let mut competitor_count = 0usize;
    for_each_chunk(g, |chunk| {
        for m in chunk {
            if contains(m, &m0) {
                if let Some(s) = table.score_masks(m) {
                    supers.push((m.clone(), s));
                }
            } else {
                competitor_count += 1;
            }
        }
        Ok(())
    })?;
    if supers.is_empty() {
        return Err(Error::invalid("no DAG consistent with the graph contains the reference DAG"));
    }
    if competitor_count.saturating_mul(supers.len()) > MAX_PAIR_EVALUATIONS {
        return Err(Error::CapExceeded(format!(
            "{competitor_count} competitors x {} supergraphs is too many pairs",
            supers.len()
        )));
    }
    let mut best: Option<(f64, Vec<u64>)> = None;
    for_each_chunk(g, |chunk| {
        let local = chunk
            .par_iter()
            .filter(|m| !contains(m, &m0))
            .filter_map(|m| {
                let s = table.score_masks(m)?;
                let inner = supers
                    .iter()
                    .map(|(m1, s1)| (s - s1) / differing(m, m1) as f64)
                    .fold(f64::NEG_INFINITY, f64::max);
                Some((inner, m.as_slice()))
            })
            .reduce_with(pick);
        if let Some((v, m)) = local {
            best = Some(match best.take() {
                Some((bv, bm)) => {
                    let (v2, m2) = pick((bv, &bm), (v, m));
                    (v2, m2.to_vec())
                }
                None => (v, m.to_vec()),
            });
        }
        Ok(())
    })?;
    let (gamma, argmin) = match best {
        Some((v, m)) => (v, Some(Dag::from_masks_unchecked(&m))),
        None => (f64::INFINITY, None),
    };
    Ok(GammaResult {
        gamma,
        argmin,
        competitors: competitor_count,
        supergraphs: supers.len(),
    })
}

/// Gap ratio of each maximal clique's sub-model: `Σ`, the weights and `G0`
/// restricted to the clique, competitors consistent with `g` on it. Requires
/// a chordal `g` whose junction tree has only singleton separators.
pub fn clique_gap_ratios(sigma: &DMatrix<f64>, w: &Weights, dag0: &Dag, g: &UGraph) -> Result<Vec<(Vec<usize>, f64)>> {
    let jt = clique_decomposition(g).ok_or_else(|| Error::invalid("search graph is not chordal"))?;
    if !jt.all_separators_singleton() {
        return Err(Error::invalid("junction tree has a separator with more than one vertex"));
    }
    let mut out = Vec::with_capacity(jt.cliques.len());
    for clique in jt.cliques {
        let local = |v: usize| clique.iter().position(|&c| c == v);
        let edges: Vec<(usize, usize)> = dag0
            .edges()
            .into_iter()
            .filter_map(|(a, b)| Some((local(a)?, local(b)?)))
            .collect();
        let sub_dag = Dag::from_edges(clique.len(), &edges)?;
        let sub_sigma = linalg::submatrix(sigma, &clique, &clique);
        let sub_w = Weights::new(clique.iter().map(|&v| w.get(v)).collect())?;
        let gamma = gap_ratio(&sub_sigma, &sub_w, &sub_dag, &g.induced(&clique))?.gamma;
        out.push((clique, gamma));
    }
    Ok(out)
}

/// Serializable summary; `None` marks quantities that were not computed or
/// have no competitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub xi: Option<f64>,
    pub xi_restricted: Option<f64>,
    pub gamma: Option<f64>,
    pub argmin_competitor: Option<GraphFile>,
    pub dags_examined: usize,
    pub competitors: usize,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Full-space gap when `p` is small enough, and the restricted gap and gap
/// ratio when a search graph is given.
pub fn gap_report(sigma: &DMatrix<f64>, w: &Weights, dag0: &Dag, g: Option<&UGraph>) -> Result<GapReport> {
    let mut report = GapReport {
        xi: None,
        xi_restricted: None,
        gamma: None,
        argmin_competitor: None,
        dags_examined: 0,
        competitors: 0,
    };
    if dag0.p() <= MAX_FULL_SPACE_P {
        let full = gap_additive(sigma, w, dag0, &GapSpace::All)?;
        report.xi = finite(full.xi);
        report.argmin_competitor = full.argmin.as_ref().map(GraphFile::from);
        report.dags_examined += full.examined;
        report.competitors += full.competitors;
    }
    if let Some(g) = g {
        let restricted = gap_additive(sigma, w, dag0, &GapSpace::Restricted(g.clone()))?;
        report.xi_restricted = finite(restricted.xi);
        if report.argmin_competitor.is_none() {
            report.argmin_competitor = restricted.argmin.as_ref().map(GraphFile::from);
        }
        report.dags_examined += restricted.examined;
        report.competitors += restricted.competitors;
        report.gamma = finite(gap_ratio(sigma, w, dag0, g)?.gamma);
    } else if dag0.p() > MAX_FULL_SPACE_P {
        return Err(Error::CapExceeded(format!(
            "p = {} needs a search graph for gap computations",
            dag0.p()
        )));
    }
    Ok(report)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} = {v} must be positive")));
    }
    Ok(())
}

fn edge_gap(b: f64, d_from: f64, d_to: f64) -> f64 {
    let r2 = (d_to / d_from).powi(2);
    let b2 = b * b;
    b2 * b2 / (r2 * r2 + b2 * r2)
}

/// Gap of the two-node DAG `X_1 -> X_2` with weight `b0` and error standard
/// deviations `d1`, `d2`.
pub fn two_var_gap(b0: f64, d1: f64, d2: f64) -> Result<f64> {
    positive("d1", d1)?;
    positive("d2", d2)?;
    Ok(edge_gap(b0, d1, d2))
}

/// Smallest `b0²` for which the unweighted score is guaranteed to pick the
/// true orientation when `r = d2/d1`.
pub fn two_var_unweighted_threshold(r: f64) -> Result<f64> {
    positive("r", r)?;
    let r2 = r * r;
    let r4 = r2 * r2;
    Ok(if r >= 1.0 {
        r2 * ((r2 - 1.0) + (r4 - 1.0).sqrt())
    } else {
        (1.0 - r2) + (1.0 - r4).sqrt()
    })
}

pub fn two_var_unweighted_condition(b0: f64, r: f64) -> Result<bool> {
    Ok(b0 * b0 >= two_var_unweighted_threshold(r)?)
}

/// Gap of the v-structure `X_1 -> X_3 <- X_2`.
pub fn three_var_gap(b13: f64, b23: f64, d1: f64, d2: f64, d3: f64) -> Result<f64> {
    positive("d1", d1)?;
    positive("d2", d2)?;
    positive("d3", d3)?;
    Ok(edge_gap(b23, d2, d3).min(edge_gap(b13, d1, d3)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecReport {
    pub a_max: f64,
    pub a_min: f64,
    pub ratio: f64,
    /// `1 + ξ / p`
    pub bound: f64,
    pub satisfied: bool,
    pub strict: bool,
}

/// Compares the spread of `omega0[j] / omega1[j]` against `1 + xi / p`.
pub fn misspec_check(omega0: &Weights, omega1: &Weights, xi: f64, p: usize) -> Result<MisspecReport> {
    if omega0.len() != omega1.len() || omega0.is_empty() {
        return Err(Error::invalid("variance vectors must be non-empty and equally long"));
    }
    if p == 0 || !(xi >= 0.0) {
        return Err(Error::invalid("need p >= 1 and a non-negative gap"));
    }
    let ratios: Vec<f64> = omega0
        .as_slice()
        .iter()
        .zip(omega1.as_slice())
        .map(|(a, b)| a / b)
        .collect();
    let a_max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = a_max / a_min;
    let bound = 1.0 + xi / p as f64;
    Ok(MisspecReport {
        a_max,
        a_min,
        ratio,
        bound,
        satisfied: ratio <= bound,
        strict: ratio < bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::LinearSem;
    use approx::assert_relative_eq;

    fn two_node(b0: f64, d1: f64, d2: f64) -> (DMatrix<f64>, Weights, Dag) {
        let sem = LinearSem::new(DMatrix::from_row_slice(2, 2, &[0.0, b0, 0.0, 0.0]), vec![d1 * d1, d2 * d2]).unwrap();
        (
            sem.population_covariance(),
            Weights::new(sem.omega().to_vec()).unwrap(),
            sem.dag(),
        )
    }

    // backward-fit score minus the true score, minimized over a fine grid
    fn brute_two_var(b0: f64, d1: f64, d2: f64) -> f64 {
        (-200_000..=200_000)
            .map(|i| {
                let b = i as f64 * 1e-5;
                b * b * b0 * b0 + (b * d2 / d1 - b0 * d1 / d2).powi(2)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn two_var_closed_form() {
        assert_relative_eq!(two_var_gap(1.0, 1.0, 1.0).unwrap(), 0.5);
        assert!((brute_two_var(1.0, 1.0, 1.0) - 0.5).abs() < 1e-8);
        assert_eq!(two_var_gap(0.0, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(two_var_gap(0.7, 1.3, 0.4).unwrap(), two_var_gap(-0.7, 1.3, 0.4).unwrap());
        assert!(two_var_gap(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn two_var_enumeration_matches_closed_form() {
        for (b0, d1, d2) in [(1.0, 1.0, 1.0), (-0.5, 1.0, 0.5), (2.0, 0.7, 1.4), (0.3, 2.0, 0.5)] {
            let (sigma, w, dag) = two_node(b0, d1, d2);
            let r = gap_additive(&sigma, &w, &dag, &GapSpace::All).unwrap();
            assert!((r.xi - two_var_gap(b0, d1, d2).unwrap()).abs() < 1e-9);
            assert_eq!(r.examined, 3);
            // the empty DAG and the reversal
            assert_eq!(r.competitors, 2);
        }
        let (sigma, w, dag) = two_node(-0.5, 1.0, 0.5);
        let r = gap_additive(&sigma, &w, &dag, &GapSpace::All).unwrap();
        assert_relative_eq!(r.xi, 0.5, epsilon = 1e-12);
        assert_eq!(r.argmin, Some(Dag::from_edges(2, &[(1, 0)]).unwrap()));
    }

    #[test]
    fn empty_reference_has_no_competitor() {
        let sigma = DMatrix::identity(2, 2);
        let w = Weights::homoscedastic(2, 1.0).unwrap();
        let r = gap_additive(&sigma, &w, &Dag::empty(2), &GapSpace::All).unwrap();
        assert!(r.xi.is_infinite());
        assert!(r.argmin.is_none());
        let rep = gap_report(&sigma, &w, &Dag::empty(2), None).unwrap();
        assert_eq!(rep.xi, None);
    }

    #[test]
    fn full_space_cap() {
        let sigma = DMatrix::identity(7, 7);
        let w = Weights::homoscedastic(7, 1.0).unwrap();
        assert!(matches!(
            gap_additive(&sigma, &w, &Dag::empty(7), &GapSpace::All),
            Err(Error::CapExceeded(_))
        ));
    }

    #[test]
    fn unweighted_threshold() {
        assert_eq!(two_var_unweighted_threshold(1.0).unwrap(), 0.0);
        assert!(two_var_unweighted_condition(0.0, 1.0).unwrap());
        assert_relative_eq!(two_var_unweighted_threshold(2.0).unwrap(), 4.0 * (3.0 + 15f64.sqrt()));
        assert!(!two_var_unweighted_condition(1.0, 2.0).unwrap());
        assert_relative_eq!(two_var_unweighted_threshold(0.5).unwrap(), 0.75 + 0.9375f64.sqrt());
        assert!(two_var_unweighted_condition(10f64.sqrt(), 0.5).unwrap());
    }

    // Under identity weights with d1 = 1, d2 = r the forward DAG wins exactly
    // when b0² > 1 - r², so the threshold above is sufficient but not tight.
    #[test]
    fn unweighted_orientation_boundary() {
        let id = Weights::homoscedastic(2, 1.0).unwrap();
        let back = Dag::from_edges(2, &[(1, 0)]).unwrap();
        for r in [0.3_f64, 0.5, 0.8] {
            let boundary = 1.0 - r * r;
            for (factor, forward_wins) in [(0.98, false), (1.02, true)] {
                let b0 = (boundary * factor).sqrt();
                let (sigma, _, fwd) = two_node(b0, 1.0, r);
                let sf = score_dag(&sigma, &id, &fwd).unwrap().score;
                let sb = score_dag(&sigma, &id, &back).unwrap().score;
                assert_eq!(sf < sb, forward_wins, "r = {r}, factor = {factor}");
            }
        }
        for r in [1.0, 1.5, 2.0] {
            let (sigma, _, fwd) = two_node(0.05, 1.0, r);
            let sf = score_dag(&sigma, &id, &fwd).unwrap().score;
            let sb = score_dag(&sigma, &id, &back).unwrap().score;
            assert!(sf <= sb + 1e-12);
        }
    }

    #[test]
    fn three_var_closed_form() {
        assert_relative_eq!(three_var_gap(1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(three_var_gap(0.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        for (b13, b23, d1, d2, d3) in [(1.0, 1.0, 1.0, 1.0, 1.0), (0.8, -1.3, 1.2, 0.6, 0.9), (2.0, 0.4, 0.5, 1.5, 1.0)] {
            let mut b = DMatrix::zeros(3, 3);
            b[(0, 2)] = b13;
            b[(1, 2)] = b23;
            let sem = LinearSem::new(b, vec![d1 * d1, d2 * d2, d3 * d3]).unwrap();
            let w = Weights::new(sem.omega().to_vec()).unwrap();
            let r = gap_additive(&sem.population_covariance(), &w, &sem.dag(), &GapSpace::All).unwrap();
            assert!((r.xi - three_var_gap(b13, b23, d1, d2, d3).unwrap()).abs() < 1e-6);
            assert_eq!(r.examined, 25);
        }
    }

    // A reversal changes the parent sets of both nodes, the empty DAG only one.
    #[test]
    fn gap_ratio_single_edge() {
        for (b0, d1, d2) in [(0.9, 1.0, 0.8), (2.0, 1.0, 1.0), (0.3, 0.5, 1.5)] {
            let (sigma, w, dag) = two_node(b0, d1, d2);
            let g = UGraph::path(2);
            let gamma = gap_ratio(&sigma, &w, &dag, &g).unwrap();
            let s0 = score_dag(&sigma, &w, &dag).unwrap().score;
            let empty = score_dag(&sigma, &w, &Dag::empty(2)).unwrap().score - s0;
            let rev = score_dag(&sigma, &w, &Dag::from_edges(2, &[(1, 0)]).unwrap()).unwrap().score - s0;
            assert_relative_eq!(gamma.gamma, empty.min(rev / 2.0), epsilon = 1e-12);
            let xi = gap_additive(&sigma, &w, &dag, &GapSpace::Restricted(g)).unwrap();
            assert!(gamma.gamma <= xi.xi + 1e-12);
            assert_eq!(gamma.supergraphs, 1);
        }
    }

    #[test]
    fn misspecification() {
        let w0 = Weights::new(vec![1.0, 0.25]).unwrap();
        let rep = misspec_check(&w0, &w0.scaled(3.0).unwrap(), 0.5, 2).unwrap();
        assert_relative_eq!(rep.ratio, 1.0);
        assert!(rep.strict);
        let rep = misspec_check(&w0, &Weights::homoscedastic(2, 1.0).unwrap(), 0.5, 2).unwrap();
        assert_relative_eq!(rep.ratio, 4.0);
        assert_relative_eq!(rep.bound, 1.25);
        assert!(!rep.satisfied);
        let rep = misspec_check(&w0, &w0, 0.0, 2).unwrap();
        assert!(rep.satisfied && !rep.strict);
    }
}

//! Minimum-score DAG selection among DAGs whose skeleton lies in a graph.

mod dp;

pub use dp::{
    dp_best_dag, dp_forget, dp_introduce, dp_join, reconstruct_dag, record_bound, Back, DpOptions,
    DpRecord, DpResult, RecordSet,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    enumerate_consistent_dags, make_nice, mask_to_vec, tree_decomposition, Dag, DecompositionMethod,
    NiceTreeDecomposition, UGraph, EXACT_TREEWIDTH_MAX_P,
};
use crate::scoring::ScoreTable;

/// Default refusal threshold for exhaustive enumeration.
pub const MAX_EXHAUSTIVE_DAGS: usize = 5_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub dag: Dag,
    pub score: f64,
    pub examined: usize,
}

fn edge_key(masks: &[u64]) -> Vec<(usize, usize)> {
    let mut e: Vec<(usize, usize)> = masks
        .iter()
        .enumerate()
        .flat_map(|(to, &m)| mask_to_vec(m).into_iter().map(move |from| (from, to)))
        .collect();
    e.sort_unstable();
    e
}

/// Enumerates every DAG consistent with `g` and keeps the lowest table score.
/// Exact ties go to the lexicographically smallest sorted edge list.
pub fn exhaustive_best_dag(table: &ScoreTable, g: &UGraph, cap: usize) -> Result<SearchResult> {
    if table.p() != g.p() {
        return Err(Error::invalid("score table and graph disagree on p"));
    }
    let mut it = enumerate_consistent_dags(g)?;
    let mut best: Option<(f64, Vec<u64>)> = None;
    let mut examined = 0usize;
    while let Some(m) = it.next_masks() {
        examined += 1;
        if examined > cap {
            return Err(Error::CapExceeded(format!("more than {cap} consistent DAGs")));
        }
        let Some(s) = table.score_masks(m) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((bs, bm)) => s < *bs || (s == *bs && edge_key(m) < edge_key(bm)),
        };
        if better {
            best = Some((s, m.to_vec()));
        }
    }
    let (score, masks) = best.ok_or_else(|| Error::invalid("no DAG is feasible under the score table"))?;
    Ok(SearchResult {
        dag: Dag::from_masks_unchecked(&masks),
        score,
        examined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    Exhaustive,
    Dp,
    /// Exhaustive when `3^|E| ≤ 10⁵`, otherwise the dynamic program.
    Auto,
}

impl SearchMethod {
    pub fn resolve(self, g: &UGraph) -> SearchMethod {
        match self {
            SearchMethod::Auto => {
                let m = g.num_edges() as f64;
                if m * 3f64.ln() <= 1e5f64.ln() {
                    SearchMethod::Exhaustive
                } else {
                    SearchMethod::Dp
                }
            }
            other => other,
        }
    }
}

/// Nice tree decomposition of `g`: exact width for small graphs, min-fill otherwise.
pub fn nice_decomposition(g: &UGraph) -> Result<NiceTreeDecomposition> {
    let method = if g.p() <= EXACT_TREEWIDTH_MAX_P {
        DecompositionMethod::ExactSmallP
    } else {
        DecompositionMethod::MinFill
    };
    Ok(make_nice(&tree_decomposition(g, method)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub method: SearchMethod,
    pub dags_examined: Option<usize>,
    pub treewidth: Option<usize>,
    pub record_sizes: Option<Vec<usize>>,
    pub peak_records: Option<usize>,
    pub estimated_bytes: Option<usize>,
}

/// Runs the chosen search. The dynamic program refuses decompositions wider
/// than `treewidth_cap`.
pub fn best_dag(
    table: &ScoreTable,
    g: &UGraph,
    method: SearchMethod,
    treewidth_cap: usize,
) -> Result<(Dag, f64, SearchStats)> {
    match method.resolve(g) {
        SearchMethod::Exhaustive => {
            let r = exhaustive_best_dag(table, g, MAX_EXHAUSTIVE_DAGS)?;
            let stats = SearchStats {
                method: SearchMethod::Exhaustive,
                dags_examined: Some(r.examined),
                treewidth: None,
                record_sizes: None,
                peak_records: None,
                estimated_bytes: None,
            };
            Ok((r.dag, r.score, stats))
        }
        _ => {
            let ntd = nice_decomposition(g)?;
            if ntd.width() > treewidth_cap {
                return Err(Error::WidthExceeded {
                    width: ntd.width(),
                    cap: treewidth_cap,
                });
            }
            let r = dp_best_dag(table, g, &ntd, DpOptions::default())?;
            let stats = SearchStats {
                method: SearchMethod::Dp,
                dags_examined: None,
                treewidth: Some(ntd.width()),
                record_sizes: Some(r.record_sizes),
                peak_records: Some(r.peak_records),
                estimated_bytes: Some(r.estimated_bytes),
            };
            Ok((r.dag, r.score, stats))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{is_consistent, moralize};
    use crate::scoring::{build_score_table, ScoreInput, Weights};
    use crate::sem::{random_sem, SemStructure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path_table() -> (UGraph, ScoreTable) {
        dp::tests::path_table()
    }

    #[test]
    fn exhaustive_path_example() {
        let (g, t) = path_table();
        let r = exhaustive_best_dag(&t, &g, 100).unwrap();
        assert_eq!(r.dag, Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap());
        assert!((r.score - 1.5).abs() < 1e-15);
        assert_eq!(r.examined, 9);
        assert!(exhaustive_best_dag(&t, &g, 5).is_err());
    }

    #[test]
    fn exhaustive_edgeless() {
        let g = UGraph::empty(3);
        let sigma = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let w = Weights::homoscedastic(3, 1.0).unwrap();
        let t = build_score_table(ScoreInput::Population(&sigma), &w, &g, 2).unwrap();
        let r = exhaustive_best_dag(&t, &g, 10).unwrap();
        assert_eq!(r.dag, Dag::empty(3));
        assert_eq!(r.score, 6.0);
    }

    #[test]
    fn population_table_recovers_a_supergraph() {
        for seed in 0..5 {
            let sem = random_sem(6, &SemStructure::Density(0.4), (0.5, 1.5), (0.5, 2.0), seed).unwrap();
            let sigma = sem.population_covariance();
            let w = Weights::new(sem.omega().to_vec()).unwrap();
            let g = moralize(&sem.dag());
            let t = build_score_table(ScoreInput::Population(&sigma), &w, &g, g.max_degree()).unwrap();
            let ex = exhaustive_best_dag(&t, &g, MAX_EXHAUSTIVE_DAGS).unwrap();
            assert!(ex.dag.contains(&sem.dag()));
            assert!((ex.score - 6.0).abs() < 1e-7);
            let (dag, score, _) = best_dag(&t, &g, SearchMethod::Dp, 8).unwrap();
            assert!(dag.contains(&sem.dag()));
            assert!((score - 6.0).abs() < 1e-7);
        }
    }

    fn random_graph(p: usize, density: f64, rng: &mut ChaCha8Rng) -> UGraph {
        let mut edges = Vec::new();
        for u in 0..p {
            for v in (u + 1)..p {
                if rng.random_bool(density) {
                    edges.push((u, v));
                }
            }
        }
        UGraph::from_edges(p, &edges).unwrap()
    }

    #[test]
    fn dp_matches_exhaustive_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 20 {
            let p = rng.random_range(3..=7);
            let g = random_graph(p, 0.5, &mut rng);
            let ntd = nice_decomposition(&g).unwrap();
            if ntd.width() > 3 {
                continue;
            }
            let sigma = nalgebra::DMatrix::identity(p, p);
            let w = Weights::homoscedastic(p, 1.0).unwrap();
            let base = build_score_table(ScoreInput::Population(&sigma), &w, &g, p).unwrap();
            let mut file = base.to_file();
            for list in file.nodes.values_mut() {
                for e in list.iter_mut() {
                    e.score = Some(rng.random_range(0.0..1.0));
                }
            }
            let t = ScoreTable::from_file(file).unwrap();
            let ex = exhaustive_best_dag(&t, &g, MAX_EXHAUSTIVE_DAGS).unwrap();
            let dp = dp_best_dag(&t, &g, &ntd, DpOptions::default()).unwrap();
            assert_eq!(dp.score, ex.score, "p = {p}, graph {:?}", g.edges());
            assert_eq!(dp.dag, ex.dag);
            assert!(is_consistent(&dp.dag, &g));
            assert!((dp.dp_score - dp.score).abs() < 1e-12);
            let bound = record_bound(ntd.width(), g.max_degree());
            if let Some(b) = bound {
                assert!(dp.record_sizes.iter().all(|&s| s as u64 <= b));
            }
            checked += 1;
        }
    }

    #[test]
    fn auto_method_and_width_cap() {
        assert_eq!(SearchMethod::Auto.resolve(&UGraph::path(5)), SearchMethod::Exhaustive);
        assert_eq!(SearchMethod::Auto.resolve(&UGraph::path(20)), SearchMethod::Dp);
        let g = UGraph::complete(4);
        let sigma = nalgebra::DMatrix::identity(4, 4);
        let w = Weights::homoscedastic(4, 1.0).unwrap();
        let t = build_score_table(ScoreInput::Population(&sigma), &w, &g, 3).unwrap();
        assert!(matches!(
            best_dag(&t, &g, SearchMethod::Dp, 2),
            Err(Error::WidthExceeded { width: 3, cap: 2 })
        ));
    }
}

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semdag::graph::{enumerate_consistent_dags, Dag, UGraph};
use semdag::scoring::{build_score_table, ScoreInput, ScoreTable, Weights};
use semdag::sem::{random_sem, LinearSem, SemStructure};

/// Every DAG on `p` labeled nodes.
pub fn all_dags(p: usize) -> Vec<Dag> {
    let mut it = enumerate_consistent_dags(&UGraph::complete(p)).unwrap();
    let mut out = Vec::new();
    while let Some(m) = it.next_masks() {
        out.push(dag_from_masks(m));
    }
    out
}

pub fn dag_from_masks(masks: &[u64]) -> Dag {
    let parents = masks
        .iter()
        .map(|&m| (0..64).filter(|&k| m >> k & 1 == 1).collect())
        .collect();
    Dag::from_parents(parents).unwrap()
}

/// Random SEM that passes the faithfulness check; retries with derived seeds.
pub fn faithful_sem(p: usize, density: f64, seed: u64) -> LinearSem {
    for k in 0..100u64 {
        let sem = random_sem(p, &SemStructure::Density(density), (0.3, 1.5), (0.5, 2.0), seed * 1000 + k).unwrap();
        if sem.check_faithfulness(1e-6).is_empty() {
            return sem;
        }
    }
    panic!("no faithful SEM for seed {seed}");
}

/// `P L Pᵀ` with `L` unit lower triangular and `P` a random permutation.
pub fn permutation_unit_lt(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let l = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => rng.random_range(-2.0..2.0),
        std::cmp::Ordering::Less => 0.0,
    });
    DMatrix::from_fn(n, n, |i, j| l[(perm[i], perm[j])])
}

pub fn trace_form(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a * a.transpose() * b.transpose() * b).trace()
}

pub fn random_graph(p: usize, density: f64, rng: &mut ChaCha8Rng) -> UGraph {
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

/// Score table on `g` with every local score replaced by a uniform draw.
pub fn random_table(g: &UGraph, rng: &mut ChaCha8Rng) -> ScoreTable {
    let p = g.p();
    let sigma = DMatrix::identity(p, p);
    let w = Weights::homoscedastic(p, 1.0).unwrap();
    let base = build_score_table(ScoreInput::Population(&sigma), &w, g, g.max_degree()).unwrap();
    let mut file = base.to_file();
    for list in file.nodes.values_mut() {
        for e in list.iter_mut() {
            e.score = Some(rng.random_range(0.0..1.0));
        }
    }
    ScoreTable::from_file(file).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

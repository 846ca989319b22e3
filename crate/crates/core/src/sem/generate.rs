//! Random SEM generators.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LinearSem;
use crate::error::{Error, Result};
use crate::graph::Dag;

#[derive(Debug, Clone, PartialEq)]
pub enum SemStructure {
    /// Each pair compatible with a random order is an edge with this probability.
    Density(f64),
    /// Exactly this many edges, uniformly among pairs of a random order.
    EdgeCount(usize),
    /// Use this DAG's support.
    Dag(Dag),
}

/// `0 -> 1 -> ... -> p-1`.
pub fn chain_dag(p: usize) -> Dag {
    let edges: Vec<(usize, usize)> = (1..p).map(|j| (j - 1, j)).collect();
    Dag::from_edges(p, &edges).expect("a chain is acyclic")
}

/// Random recursive tree: node `j >= 1` gets one parent uniform in `0..j`.
pub fn random_tree_dag(p: usize, seed: u64) -> Dag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize)> = (1..p).map(|j| (rng.random_range(0..j), j)).collect();
    Dag::from_edges(p, &edges).expect("a tree is acyclic")
}

/// Draws a SEM with coefficient magnitudes in `coef_range` (random sign) and
/// error variances in `omega_range`.
pub fn random_sem(
    p: usize,
    structure: &SemStructure,
    coef_range: (f64, f64),
    omega_range: (f64, f64),
    seed: u64,
) -> Result<LinearSem> {
    let (lo, hi) = coef_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid(format!("coefficient range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
    }
    let (wlo, whi) = omega_range;
    if !(wlo > 0.0 && wlo <= whi && whi.is_finite()) {
        return Err(Error::invalid(format!("variance range [{wlo}, {whi}] must satisfy 0 < lo <= hi")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize)> = match structure {
        SemStructure::Density(d) => {
            if !(0.0..=1.0).contains(d) {
                return Err(Error::invalid(format!("density {d} outside [0, 1]")));
            }
            let order = random_order(p, &mut rng);
            let mut out = Vec::new();
            for i in 0..p {
                for j in (i + 1)..p {
                    if rng.random_bool(*d) {
                        out.push((order[i], order[j]));
                    }
                }
            }
            out
        }
        SemStructure::EdgeCount(m) => {
            let max = p * p.saturating_sub(1) / 2;
            if *m > max {
                return Err(Error::invalid(format!("{m} edges requested but a DAG on {p} nodes has at most {max}")));
            }
            let order = random_order(p, &mut rng);
            let mut pairs: Vec<(usize, usize)> = (0..p)
                .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
                .collect();
            pairs.shuffle(&mut rng);
            pairs.truncate(*m);
            pairs.into_iter().map(|(i, j)| (order[i], order[j])).collect()
        }
        SemStructure::Dag(dag) => {
            if dag.p() != p {
                return Err(Error::invalid(format!("structure has {} nodes, expected {p}", dag.p())));
            }
            dag.edges()
        }
    };
    let mut b = DMatrix::zeros(p, p);
    for (from, to) in edges {
        let mag = if lo == hi { lo } else { rng.random_range(lo..hi) };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        b[(from, to)] = sign * mag;
    }
    let omega = (0..p)
        .map(|_| if wlo == whi { wlo } else { rng.random_range(wlo..whi) })
        .collect();
    LinearSem::new(b, omega)
}

fn random_order(p: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(rng);
    order
}

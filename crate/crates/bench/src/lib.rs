//! Fixtures shared by the benchmarks.

use semdag::graph::{moralize, UGraph};
use semdag::scoring::{build_score_table, ScoreInput, ScoreTable, Weights};
use semdag::sem::{random_sem, random_tree_dag, DataMatrix, LinearSem, NoiseSpec, SemStructure};

pub fn sem(p: usize, density: f64, seed: u64) -> LinearSem {
    random_sem(p, &SemStructure::Density(density), (0.5, 1.0), (1.0, 1.0), seed).expect("valid SEM parameters")
}

pub fn sample(sem: &LinearSem, n: usize, seed: u64) -> DataMatrix {
    sem.sample(n, &NoiseSpec::gaussian(sem.p()), seed).expect("sampling succeeds")
}

pub fn tree_sem(p: usize, seed: u64) -> LinearSem {
    random_sem(p, &SemStructure::Dag(random_tree_dag(p, seed)), (0.5, 1.0), (1.0, 1.0), seed).expect("valid SEM parameters")
}

/// Moral graph of a random SEM and its population score table.
pub fn moral_table(p: usize, density: f64, seed: u64) -> (UGraph, ScoreTable) {
    table_for(&sem(p, density, seed))
}

pub fn table_for(sem: &LinearSem) -> (UGraph, ScoreTable) {
    let p = sem.p();
    let g = moralize(&sem.dag());
    let sigma = sem.population_covariance();
    let w = Weights::homoscedastic(p, 1.0).expect("positive weight");
    let table = build_score_table(ScoreInput::Population(&sigma), &w, &g, g.max_degree()).expect("table fits the caps");
    (g, table)
}

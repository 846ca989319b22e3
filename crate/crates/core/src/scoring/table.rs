use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{corrupted_local_score, empirical_local_score, population_local_score, Weights};
use crate::error::{Error, Result};
use crate::graph::{mask_of, Dag, UGraph};
use crate::precision::{CovarianceEstimate, CovarianceSource};
use crate::sem::DataMatrix;

/// Largest accepted parent-set size bound.
pub const MAX_PARENTS_CAP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Population,
    Empirical,
    Corrupted,
}

/// Where local scores come from.
#[derive(Debug, Clone, Copy)]
pub enum ScoreInput<'a> {
    /// Exact covariance.
    Population(&'a nalgebra::DMatrix<f64>),
    /// Least squares on clean samples.
    Data(&'a DataMatrix),
    /// Plug-in covariance estimate (clean or surrogate).
    Covariance(&'a CovarianceEstimate),
}

impl ScoreInput<'_> {
    fn p(&self) -> usize {
        match self {
            ScoreInput::Population(s) => s.nrows(),
            ScoreInput::Data(d) => d.p(),
            ScoreInput::Covariance(c) => c.p(),
        }
    }

    fn source(&self) -> ScoreSource {
        match self {
            ScoreInput::Population(_) => ScoreSource::Population,
            ScoreInput::Data(_) => ScoreSource::Empirical,
            ScoreInput::Covariance(c) => match c.source {
                CovarianceSource::Clean if c.n == 0 => ScoreSource::Population,
                CovarianceSource::Clean => ScoreSource::Empirical,
                _ => ScoreSource::Corrupted,
            },
        }
    }

    fn local(&self, w: &Weights, j: usize, s: &[usize]) -> Result<f64> {
        match self {
            ScoreInput::Population(sigma) => population_local_score(sigma, w, j, s),
            ScoreInput::Data(d) => empirical_local_score(d, w, j, s),
            ScoreInput::Covariance(c) => corrupted_local_score(c, w, j, s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryFlag {
    Ok,
    /// The design for this parent set was singular; the set is infeasible.
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub parents: Vec<usize>,
    pub score: Option<f64>,
    pub flag: EntryFlag,
}

/// Local scores `f_j(S)` for every `S ⊆ N(j)` with `|S| ≤ max_parents`.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    source: ScoreSource,
    max_parents: usize,
    neighborhoods: Vec<Vec<usize>>,
    entries: Vec<Vec<ScoreEntry>>,
    index: Vec<HashMap<u64, usize>>,
}

/// All subsets of `items` with at most `k` elements, by size then lexicographically.
pub fn subsets_up_to(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<(Vec<usize>, usize)> = vec![(Vec::new(), 0)];
    for _ in 0..k.min(items.len()) {
        let mut next = Vec::new();
        for (set, start) in &frontier {
            for (i, &v) in items.iter().enumerate().skip(*start) {
                let mut s = set.clone();
                s.push(v);
                next.push((s, i + 1));
            }
        }
        out.extend(next.iter().map(|(s, _)| s.clone()));
        frontier = next;
    }
    out
}

pub fn build_score_table(input: ScoreInput<'_>, w: &Weights, g: &UGraph, max_parents: usize) -> Result<ScoreTable> {
    let p = g.p();
    if input.p() != p || w.len() != p {
        return Err(Error::invalid(format!(
            "score input has p = {}, weights {}, graph {p}",
            input.p(),
            w.len()
        )));
    }
    if max_parents > MAX_PARENTS_CAP {
        return Err(Error::CapExceeded(format!(
            "max_parents {max_parents} exceeds the cap of {MAX_PARENTS_CAP}"
        )));
    }
    if let ScoreInput::Data(d) = input {
        d.require_complete()?;
    }
    let neighborhoods: Vec<Vec<usize>> = (0..p).map(|j| g.neighbors(j).to_vec()).collect();
    let jobs: Vec<(usize, Vec<usize>)> = neighborhoods
        .iter()
        .enumerate()
        .flat_map(|(j, nb)| subsets_up_to(nb, max_parents).into_iter().map(move |s| (j, s)))
        .collect();
    let computed: Vec<(usize, ScoreEntry)> = jobs
        .into_par_iter()
        .map(|(j, s)| match input.local(w, j, &s) {
            Ok(v) => Ok((
                j,
                ScoreEntry {
                    parents: s,
                    score: Some(v),
                    flag: EntryFlag::Ok,
                },
            )),
            Err(Error::Singular { .. }) => Ok((
                j,
                ScoreEntry {
                    parents: s,
                    score: None,
                    flag: EntryFlag::Singular,
                },
            )),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut entries: Vec<Vec<ScoreEntry>> = vec![Vec::new(); p];
    for (j, e) in computed {
        entries[j].push(e);
    }
    ScoreTable::from_parts(input.source(), max_parents, neighborhoods, entries)
}

impl ScoreTable {
    fn from_parts(
        source: ScoreSource,
        max_parents: usize,
        neighborhoods: Vec<Vec<usize>>,
        entries: Vec<Vec<ScoreEntry>>,
    ) -> Result<Self> {
        let mut index = Vec::with_capacity(entries.len());
        for (j, list) in entries.iter().enumerate() {
            let mut map = HashMap::with_capacity(list.len());
            for (i, e) in list.iter().enumerate() {
                if e.parents.iter().any(|k| !neighborhoods[j].contains(k)) {
                    return Err(Error::invalid(format!(
                        "parent set {:?} of node {j} is not inside its neighborhood",
                        e.parents
                    )));
                }
                if e.score.is_some_and(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("non-finite score for node {j}")));
                }
                map.insert(mask_of(&e.parents), i);
            }
            index.push(map);
        }
        Ok(ScoreTable {
            source,
            max_parents,
            neighborhoods,
            entries,
            index,
        })
    }

    pub fn p(&self) -> usize {
        self.entries.len()
    }

    pub fn source(&self) -> ScoreSource {
        self.source
    }

    pub fn max_parents(&self) -> usize {
        self.max_parents
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.neighborhoods[j]
    }

    pub fn entries(&self, j: usize) -> &[ScoreEntry] {
        &self.entries[j]
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Score of node `j` with parents given as a bitmask; `None` when the set
    /// is absent from the table or infeasible.
    pub fn local_mask(&self, j: usize, parents: u64) -> Option<f64> {
        self.index[j].get(&parents).and_then(|&i| self.entries[j][i].score)
    }

    pub fn local(&self, j: usize, parents: &[usize]) -> Option<f64> {
        self.local_mask(j, mask_of(parents))
    }

    /// Sum of local scores, or `None` if some parent set is unavailable.
    pub fn score_masks(&self, parents: &[u64]) -> Option<f64> {
        let mut total = 0.0;
        for (j, &m) in parents.iter().enumerate() {
            total += self.local_mask(j, m)?;
        }
        Some(total)
    }

    pub fn score_dag(&self, dag: &Dag) -> Option<f64> {
        if dag.p() != self.p() {
            return None;
        }
        self.score_masks(&dag.parent_masks())
    }

    pub fn to_file(&self) -> ScoreTableFile {
        ScoreTableFile {
            source: self.source,
            max_parents: self.max_parents,
            neighborhoods: self.neighborhoods.clone(),
            nodes: self
                .entries
                .iter()
                .enumerate()
                .map(|(j, e)| (j.to_string(), e.clone()))
                .collect(),
        }
    }

    pub fn from_file(f: ScoreTableFile) -> Result<Self> {
        let p = f.neighborhoods.len();
        let mut entries = vec![Vec::new(); p];
        for (key, list) in f.nodes {
            let j: usize = key
                .parse()
                .map_err(|_| Error::invalid(format!("node key '{key}' is not an index")))?;
            if j >= p {
                return Err(Error::invalid(format!("node {j} out of range")));
            }
            entries[j] = list;
        }
        for list in &mut entries {
            for e in list.iter_mut() {
                e.parents.sort_unstable();
            }
        }
        Self::from_parts(f.source, f.max_parents, f.neighborhoods, entries)
    }
}

/// JSON form: `nodes` maps each node label to `[{parents, score, flag}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTableFile {
    pub source: ScoreSource,
    pub max_parents: usize,
    pub neighborhoods: Vec<Vec<usize>>,
    pub nodes: BTreeMap<String, Vec<ScoreEntry>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::enumerate_consistent_dags;
    use crate::scoring::score_dag;
    use crate::sem::{random_sem, SemStructure};
    use approx::assert_relative_eq;

    #[test]
    fn subset_enumeration() {
        assert_eq!(subsets_up_to(&[], 3), vec![Vec::<usize>::new()]);
        assert_eq!(
            subsets_up_to(&[1, 4, 7], 2),
            vec![vec![], vec![1], vec![4], vec![7], vec![1, 4], vec![1, 7], vec![4, 7]]
        );
        assert_eq!(subsets_up_to(&[0, 1, 2, 3], 4).len(), 16);
    }

    #[test]
    fn table_shapes() {
        let sigma = nalgebra::DMatrix::identity(3, 3);
        let w = Weights::homoscedastic(3, 1.0).unwrap();
        let t = build_score_table(ScoreInput::Population(&sigma), &w, &UGraph::empty(3), 3).unwrap();
        assert_eq!(t.len(), 3);
        let t = build_score_table(ScoreInput::Population(&sigma), &w, &UGraph::path(3), 3).unwrap();
        assert_eq!(t.entries(1).len(), 4);
        assert_eq!(t.entries(0).len(), 2);
        assert!(build_score_table(ScoreInput::Population(&sigma), &w, &UGraph::path(3), 13).is_err());
        let capped = build_score_table(ScoreInput::Population(&sigma), &w, &UGraph::complete(3), 1).unwrap();
        assert_eq!(capped.local(0, &[1, 2]), None);
    }

    #[test]
    fn table_reproduces_dag_scores() {
        let sem = random_sem(5, &SemStructure::Density(0.5), (0.5, 1.5), (0.5, 2.0), 21).unwrap();
        let sigma = sem.population_covariance();
        let w = Weights::new(sem.omega().to_vec()).unwrap();
        let g = crate::graph::moralize(&sem.dag());
        let t = build_score_table(ScoreInput::Population(&sigma), &w, &g, 4).unwrap();
        for dag in enumerate_consistent_dags(&g).unwrap() {
            let direct = score_dag(&sigma, &w, &dag).unwrap().score;
            assert_relative_eq!(t.score_dag(&dag).unwrap(), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn json_roundtrip_and_singular_flag() {
        let d = DataMatrix::new(nalgebra::DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 1.0, 0.0, 2.0, 2.0, 1.0, 3.0, 3.0, 5.0],
        ));
        let w = Weights::homoscedastic(3, 1.0).unwrap();
        let t = build_score_table(ScoreInput::Data(&d), &w, &UGraph::complete(3), 2).unwrap();
        assert_eq!(t.source(), ScoreSource::Empirical);
        let e = t.entries(2).iter().find(|e| e.parents == vec![0, 1]).unwrap();
        assert_eq!(e.flag, EntryFlag::Singular);
        assert_eq!(t.local(2, &[0, 1]), None);
        let json = serde_json::to_string(&t.to_file()).unwrap();
        assert!(json.contains("\"singular\""));
        let back = ScoreTable::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.to_file(), t.to_file());
    }
}

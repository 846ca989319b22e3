//! Dynamic program over a nice tree decomposition.
//!
//! A record at node `t` fixes a parent set `a(v)` for every bag vertex, the
//! reachability relation `p` among bag vertices induced by the partial DAG
//! built so far, and the accumulated score `s` of all forgotten vertices.
//! Arcs appear once both endpoints share a bag, so every arc of the final
//! DAG is checked against the reachability relation of some bag.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Dag, NiceKind, NiceTreeDecomposition, UGraph};
use crate::scoring::ScoreTable;

/// Provenance of a record: the child set(s) and record(s) it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Back {
    Leaf,
    Introduce { set: usize, record: usize },
    Forget { set: usize, record: usize, vertex: usize, parents: u64 },
    Join { left: (usize, usize), right: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpRecord {
    /// Parent mask per bag vertex, in bag order.
    pub parents: Vec<u64>,
    /// Row `i` has bit `k` set when bag vertex `i` reaches bag vertex `k`.
    pub paths: Vec<u64>,
    pub score: f64,
    pub back: Back,
}

/// Records of one decomposition node, at most one per `(parents, paths)` key.
#[derive(Debug, Clone, Default)]
pub struct RecordSet {
    bag: Vec<usize>,
    records: Vec<DpRecord>,
    index: BTreeMap<(Vec<u64>, Vec<u64>), usize>,
}

impl RecordSet {
    pub fn new(bag: Vec<usize>) -> Self {
        RecordSet {
            bag,
            records: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// The record set of a leaf: one empty partial DAG with score 0.
    pub fn leaf() -> Self {
        let mut r = RecordSet::new(Vec::new());
        r.insert(DpRecord {
            parents: Vec::new(),
            paths: Vec::new(),
            score: 0.0,
            back: Back::Leaf,
        });
        r
    }

    pub fn bag(&self) -> &[usize] {
        &self.bag
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DpRecord] {
        &self.records
    }

    /// Keeps the lower score per key; on equal scores the earlier record stays.
    pub fn insert(&mut self, rec: DpRecord) {
        debug_assert!(is_closed_acyclic(&rec.paths));
        let key = (rec.parents.clone(), rec.paths.clone());
        match self.index.get(&key) {
            Some(&i) => {
                if rec.score < self.records[i].score {
                    self.records[i] = rec;
                }
            }
            None => {
                self.index.insert(key, self.records.len());
                self.records.push(rec);
            }
        }
    }
}

fn is_closed_acyclic(paths: &[u64]) -> bool {
    let n = paths.len();
    (0..n).all(|i| paths[i] & (1 << i) == 0 && mask_iter(paths[i]).all(|k| paths[k] & !paths[i] == 0))
}

fn mask_iter(mut m: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if m == 0 {
            return None;
        }
        let v = m.trailing_zeros() as usize;
        m &= m - 1;
        Some(v)
    })
}

/// Transitive closure in place; `false` when a cycle appears.
fn close(paths: &mut [u64]) -> bool {
    let n = paths.len();
    for k in 0..n {
        for i in 0..n {
            if paths[i] & (1 << k) != 0 {
                paths[i] |= paths[k];
            }
        }
    }
    (0..n).all(|i| paths[i] & (1 << i) == 0)
}

fn insert_bit(m: u64, pos: usize) -> u64 {
    let low = m & ((1u64 << pos) - 1);
    let high = m >> pos;
    low | (high << (pos + 1))
}

fn remove_bit(m: u64, pos: usize) -> u64 {
    let low = m & ((1u64 << pos) - 1);
    let high = m >> (pos + 1);
    low | (high << pos)
}

/// Adds `v0` to the bag, pairing each record with every feasible parent set
/// of `v0` from `table`. Arcs between `v0` and bag vertices materialize now.
pub fn dp_introduce(r: &RecordSet, set_id: usize, v0: usize, table: &ScoreTable) -> Result<RecordSet> {
    if r.bag.contains(&v0) {
        return Err(Error::InvalidDecomposition(format!("vertex {v0} introduced twice")));
    }
    let mut bag = r.bag.clone();
    let pos = bag.partition_point(|&u| u < v0);
    bag.insert(pos, v0);
    let options: Vec<u64> = table
        .entries(v0)
        .iter()
        .filter(|e| e.score.is_some())
        .map(|e| crate::graph::mask_of(&e.parents))
        .collect();
    let mut out = RecordSet::new(bag.clone());
    for (ri, rec) in r.records.iter().enumerate() {
        'option: for &pmask in &options {
            let mut parents = rec.parents.clone();
            parents.insert(pos, pmask);
            let mut paths: Vec<u64> = rec.paths.iter().map(|&m| insert_bit(m, pos)).collect();
            paths.insert(pos, 0);
            for (i, &u) in bag.iter().enumerate() {
                if i == pos {
                    continue;
                }
                let into = pmask & (1 << u) != 0;
                let out_of = parents[i] & (1 << v0) != 0;
                if into && out_of {
                    continue 'option;
                }
                if into {
                    paths[i] |= 1 << pos;
                }
                if out_of {
                    paths[pos] |= 1 << i;
                }
            }
            if !close(&mut paths) {
                continue;
            }
            out.insert(DpRecord {
                parents,
                paths,
                score: rec.score,
                back: Back::Introduce { set: set_id, record: ri },
            });
        }
    }
    Ok(out)
}

/// Removes `v0` from the bag and adds its local score.
pub fn dp_forget(r: &RecordSet, set_id: usize, v0: usize, table: &ScoreTable) -> Result<RecordSet> {
    let pos = r
        .bag
        .iter()
        .position(|&u| u == v0)
        .ok_or_else(|| Error::InvalidDecomposition(format!("forgetting {v0}, which is not in the bag")))?;
    let mut bag = r.bag.clone();
    bag.remove(pos);
    let mut out = RecordSet::new(bag);
    for (ri, rec) in r.records.iter().enumerate() {
        let pmask = rec.parents[pos];
        let Some(local) = table.local_mask(v0, pmask) else {
            continue;
        };
        let mut parents = rec.parents.clone();
        parents.remove(pos);
        let mut paths = rec.paths.clone();
        paths.remove(pos);
        for m in paths.iter_mut() {
            *m = remove_bit(*m, pos);
        }
        out.insert(DpRecord {
            parents,
            paths,
            score: rec.score + local,
            back: Back::Forget {
                set: set_id,
                record: ri,
                vertex: v0,
                parents: pmask,
            },
        });
    }
    Ok(out)
}

/// Combines records with equal parent assignments, closing the union of
/// their reachability relations and dropping cyclic combinations.
pub fn dp_join(r1: &RecordSet, id1: usize, r2: &RecordSet, id2: usize) -> Result<RecordSet> {
    if r1.bag != r2.bag {
        return Err(Error::InvalidDecomposition(format!(
            "join children have different bags {:?} and {:?}",
            r1.bag, r2.bag
        )));
    }
    let mut by_parents: BTreeMap<&[u64], Vec<usize>> = BTreeMap::new();
    for (i, rec) in r2.records.iter().enumerate() {
        by_parents.entry(rec.parents.as_slice()).or_default().push(i);
    }
    let mut out = RecordSet::new(r1.bag.clone());
    for (i1, a) in r1.records.iter().enumerate() {
        let Some(matches) = by_parents.get(a.parents.as_slice()) else {
            continue;
        };
        for &i2 in matches {
            let b = &r2.records[i2];
            let mut paths: Vec<u64> = a.paths.iter().zip(&b.paths).map(|(x, y)| x | y).collect();
            if !close(&mut paths) {
                continue;
            }
            out.insert(DpRecord {
                parents: a.parents.clone(),
                paths,
                score: a.score + b.score,
                back: Back::Join {
                    left: (id1, i1),
                    right: (id2, i2),
                },
            });
        }
    }
    Ok(out)
}

/// Follows back-pointers from `(set, record)` and collects every forgotten
/// vertex's parent set.
pub fn reconstruct_dag(sets: &[RecordSet], start: (usize, usize), p: usize) -> Result<Dag> {
    let mut parents = vec![0u64; p];
    let mut seen = vec![false; p];
    let mut stack = vec![start];
    while let Some((s, r)) = stack.pop() {
        match sets[s].records[r].back {
            Back::Leaf => {}
            Back::Introduce { set, record } => stack.push((set, record)),
            Back::Forget {
                set,
                record,
                vertex,
                parents: m,
            } => {
                if std::mem::replace(&mut seen[vertex], true) {
                    return Err(Error::InvalidDecomposition(format!("vertex {vertex} forgotten twice")));
                }
                parents[vertex] = m;
                stack.push((set, record));
            }
            Back::Join { left, right } => {
                stack.push(right);
                stack.push(left);
            }
        }
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidDecomposition(format!("vertex {v} is never forgotten")));
    }
    let dag = Dag::from_masks_unchecked(&parents);
    dag.topological_sort()?;
    Ok(dag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpOptions {
    /// Refuse to hold more records than this at any node.
    pub max_records: usize,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions { max_records: 2_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpResult {
    pub dag: Dag,
    /// Sum of the table's local scores over nodes `0..p` for `dag`.
    pub score: f64,
    /// Score as accumulated by the program.
    pub dp_score: f64,
    /// Record-set size per decomposition node, then per final forget.
    pub record_sizes: Vec<usize>,
    pub peak_records: usize,
    pub estimated_bytes: usize,
}

/// Upper bound `2^((w+1)(w+d))` on any record set, or `None` if it does not fit in `u64`.
pub fn record_bound(width: usize, max_degree: usize) -> Option<u64> {
    let e = (width + 1) * (width + max_degree);
    (e < 64).then(|| 1u64 << e)
}

pub fn dp_best_dag(table: &ScoreTable, g: &UGraph, ntd: &NiceTreeDecomposition, opts: DpOptions) -> Result<DpResult> {
    let p = g.p();
    if table.p() != p {
        return Err(Error::invalid("score table and graph disagree on p"));
    }
    for j in 0..p {
        if table.neighbors(j).iter().any(|&k| !g.has_edge(j, k)) {
            return Err(Error::invalid(format!(
                "score table neighborhood of {j} is not inside the graph"
            )));
        }
    }
    ntd.validate(g)
        .map_err(|v| Error::InvalidDecomposition(v.to_string()))?;
    if ntd.width() + 1 > 64 {
        return Err(Error::WidthExceeded {
            width: ntd.width(),
            cap: 63,
        });
    }
    let bound = record_bound(ntd.width(), g.max_degree());
    let mut sets: Vec<RecordSet> = Vec::with_capacity(ntd.len() + p);
    let check = |set: &RecordSet| -> Result<()> {
        if let Some(b) = bound {
            assert!(
                set.len() as u64 <= b,
                "record set of size {} exceeds the bound {b}",
                set.len()
            );
        }
        if set.len() > opts.max_records {
            return Err(Error::RecordOverflow {
                records: set.len(),
                budget: opts.max_records,
            });
        }
        Ok(())
    };
    for (t, node) in ntd.nodes.iter().enumerate() {
        let set = match node.kind {
            NiceKind::Leaf => RecordSet::leaf(),
            NiceKind::Introduce(v) => dp_introduce(&sets[node.children[0]], node.children[0], v, table)?,
            NiceKind::Forget(v) => dp_forget(&sets[node.children[0]], node.children[0], v, table)?,
            NiceKind::Join => dp_join(
                &sets[node.children[0]],
                node.children[0],
                &sets[node.children[1]],
                node.children[1],
            )?,
        };
        check(&set)?;
        debug_assert_eq!(sets.len(), t);
        sets.push(set);
    }
    let mut last = ntd.root;
    let root_bag = sets[last].bag.clone();
    for v in root_bag {
        let set = dp_forget(&sets[last], last, v, table)?;
        check(&set)?;
        sets.push(set);
        last = sets.len() - 1;
    }
    let best = sets[last]
        .records
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score).then(a.0.cmp(&b.0)))
        .map(|(i, r)| (i, r.score))
        .ok_or_else(|| Error::invalid("no DAG is feasible under the score table"))?;
    let dag = reconstruct_dag(&sets, (last, best.0), p)?;
    let score = table
        .score_dag(&dag)
        .ok_or_else(|| Error::invalid("reconstructed DAG uses a parent set missing from the table"))?;
    let record_sizes: Vec<usize> = sets.iter().map(RecordSet::len).collect();
    let estimated_bytes = sets
        .iter()
        .map(|s| s.len() * (std::mem::size_of::<DpRecord>() + 2 * 16 * (s.bag.len() + 1) + 64))
        .sum();
    Ok(DpResult {
        dag,
        score,
        dp_score: best.1,
        peak_records: record_sizes.iter().copied().max().unwrap_or(0),
        record_sizes,
        estimated_bytes,
    })
}

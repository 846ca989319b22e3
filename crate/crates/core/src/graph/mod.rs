//! Directed and undirected graph structures over vertices `0..p`.
//!
//! Parent sets and neighborhoods are kept as sorted vertex lists so that
//! iteration order, serialization and tie-breaking are deterministic.

mod decomposition;
mod enumerate;
mod junction;

pub use decomposition::{
    make_nice, tree_decomposition, validate_decomposition, DecompositionMethod, NiceKind,
    NiceNode, NiceTreeDecomposition, TreeDecomposition, Violation, EXACT_TREEWIDTH_MAX_P,
};
pub use enumerate::{count_consistent_dags, enumerate_consistent_dags, ConsistentDags};
pub use junction::{clique_decomposition, JunctionTree};

use std::collections::{BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest vertex count supported by the bitmask-based routines.
pub const MAX_NODES: usize = 64;

pub(crate) fn mask_of(vs: &[usize]) -> u64 {
    vs.iter().fold(0u64, |m, &v| m | (1u64 << v))
}

pub(crate) fn mask_to_vec(mut m: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(m.count_ones() as usize);
    while m != 0 {
        let v = m.trailing_zeros() as usize;
        out.push(v);
        m &= m - 1;
    }
    out
}

/// A directed acyclic graph given by its parent sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dag {
    parents: Vec<Vec<usize>>,
}

impl Dag {
    pub fn empty(p: usize) -> Self {
        Dag {
            parents: vec![Vec::new(); p],
        }
    }

    /// Builds a DAG from parent lists, rejecting self-loops, out-of-range
    /// vertices and directed cycles.
    pub fn from_parents(parents: Vec<Vec<usize>>) -> Result<Self> {
        let p = parents.len();
        let mut clean = Vec::with_capacity(p);
        for (j, pa) in parents.into_iter().enumerate() {
            let set: BTreeSet<usize> = pa.into_iter().collect();
            if let Some(&bad) = set.iter().find(|&&k| k >= p || k == j) {
                return Err(Error::invalid(format!("invalid parent {bad} for node {j}")));
            }
            clean.push(set.into_iter().collect());
        }
        let dag = Dag { parents: clean };
        dag.topological_sort()?;
        Ok(dag)
    }

    /// Builds a DAG from directed edges `(from, to)`.
    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut parents = vec![Vec::new(); p];
        for &(u, v) in edges {
            if u >= p || v >= p {
                return Err(Error::invalid(format!("edge ({u},{v}) out of range for p={p}")));
            }
            parents[v].push(u);
        }
        Self::from_parents(parents)
    }

    /// Builds a DAG from parent bitmasks. The caller guarantees acyclicity.
    pub(crate) fn from_masks_unchecked(masks: &[u64]) -> Self {
        Dag {
            parents: masks.iter().map(|&m| mask_to_vec(m)).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self, j: usize) -> &[usize] {
        &self.parents[j]
    }

    pub fn parent_sets(&self) -> &[Vec<usize>] {
        &self.parents
    }

    pub fn parent_masks(&self) -> Vec<u64> {
        self.parents.iter().map(|pa| mask_of(pa)).collect()
    }

    pub fn num_edges(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// Directed edges `(from, to)` sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(j, pa)| pa.iter().map(move |&k| (k, j)))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].binary_search(&from).is_ok()
    }

    /// True if every edge of `other` is an edge of `self`.
    pub fn contains(&self, other: &Dag) -> bool {
        self.p() == other.p()
            && other
                .parents
                .iter()
                .zip(&self.parents)
                .all(|(small, big)| small.iter().all(|k| big.binary_search(k).is_ok()))
    }

    /// Topological order, smallest available label first.
    pub fn topological_sort(&self) -> Result<Vec<usize>> {
        let p = self.p();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut children = vec![Vec::new(); p];
        for (j, pa) in self.parents.iter().enumerate() {
            for &k in pa {
                children[k].push(j);
            }
        }
        let mut heap: BinaryHeap<Reverse<usize>> =
            (0..p).filter(|&j| indeg[j] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(p);
        while let Some(Reverse(v)) = heap.pop() {
            order.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    heap.push(Reverse(c));
                }
            }
        }
        if order.len() == p {
            return Ok(order);
        }
        Err(Error::Cycle {
            cycle: self.find_cycle(&indeg),
        })
    }

    // Walks parent links among the unsorted remainder until a vertex repeats.
    fn find_cycle(&self, indeg: &[usize]) -> Vec<usize> {
        let start = indeg.iter().position(|&d| d > 0).unwrap_or(0);
        let mut seen = vec![usize::MAX; self.p()];
        let mut walk = Vec::new();
        let mut v = start;
        while seen[v] == usize::MAX {
            seen[v] = walk.len();
            walk.push(v);
            v = *self.parents[v]
                .iter()
                .find(|&&k| indeg[k] > 0)
                .expect("vertex left after Kahn elimination has an unsorted parent");
        }
        let mut cycle = walk[seen[v]..].to_vec();
        cycle.reverse();
        cycle
    }

    /// Nodes whose parent sets differ between the two DAGs.
    pub fn differing_nodes(&self, other: &Dag) -> Vec<usize> {
        (0..self.p())
            .filter(|&j| self.parents[j] != other.parents[j])
            .collect()
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph G {\n");
        for j in 0..self.p() {
            let _ = writeln!(s, "  {j};");
        }
        for (u, v) in self.edges() {
            let _ = writeln!(s, "  {u} -> {v};");
        }
        s.push_str("}\n");
        s
    }
}

/// An undirected simple graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UGraph {
    adj: Vec<Vec<usize>>,
}

impl UGraph {
    pub fn empty(p: usize) -> Self {
        UGraph {
            adj: vec![Vec::new(); p],
        }
    }

    pub fn complete(p: usize) -> Self {
        UGraph {
            adj: (0..p).map(|j| (0..p).filter(|&k| k != j).collect()).collect(),
        }
    }

    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); p];
        for &(u, v) in edges {
            if u >= p || v >= p {
                return Err(Error::invalid(format!("edge ({u},{v}) out of range for p={p}")));
            }
            if u == v {
                return Err(Error::invalid(format!("self-loop at {u}")));
            }
            sets[u].insert(v);
            sets[v].insert(u);
        }
        Ok(UGraph {
            adj: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn path(p: usize) -> Self {
        let edges: Vec<_> = (1..p).map(|j| (j - 1, j)).collect();
        Self::from_edges(p, &edges).expect("path edges are valid")
    }

    pub fn p(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.adj[j]
    }

    pub fn neighbor_mask(&self, j: usize) -> u64 {
        mask_of(&self.adj[j])
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    pub fn degree(&self, j: usize) -> usize {
        self.adj[j].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Connected components, each sorted, ordered by smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let p = self.p();
        let mut comp = vec![usize::MAX; p];
        let mut out = Vec::new();
        for s in 0..p {
            if comp[s] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![s];
            let mut members = Vec::new();
            comp[s] = id;
            while let Some(v) = stack.pop() {
                members.push(v);
                for &w in &self.adj[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = id;
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Subgraph induced on `vertices`, relabeled to `0..vertices.len()` in the
    /// given order.
    pub fn induced(&self, vertices: &[usize]) -> UGraph {
        let pos: std::collections::HashMap<usize, usize> =
            vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut edges = Vec::new();
        for (i, &v) in vertices.iter().enumerate() {
            for w in &self.adj[v] {
                if let Some(&k) = pos.get(w) {
                    if i < k {
                        edges.push((i, k));
                    }
                }
            }
        }
        UGraph::from_edges(vertices.len(), &edges).expect("induced edges are valid")
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph G {\n");
        for j in 0..self.p() {
            let _ = writeln!(s, "  {j};");
        }
        for (u, v) in self.edges() {
            let _ = writeln!(s, "  {u} -- {v};");
        }
        s.push_str("}\n");
        s
    }
}

/// Skeleton plus an edge between every pair of parents sharing a child.
pub fn moralize(dag: &Dag) -> UGraph {
    let mut edges = dag.edges();
    for pa in dag.parent_sets() {
        for (i, &a) in pa.iter().enumerate() {
            for &b in &pa[i + 1..] {
                edges.push((a, b));
            }
        }
    }
    UGraph::from_edges(dag.p(), &edges).expect("dag edges are in range")
}

pub fn skeleton(dag: &Dag) -> UGraph {
    UGraph::from_edges(dag.p(), &dag.edges()).expect("dag edges are in range")
}

/// `dag` belongs to the restricted space of `g`: every parent is a neighbor.
pub fn is_consistent(dag: &Dag, g: &UGraph) -> bool {
    dag.p() == g.p()
        && (0..dag.p()).all(|j| dag.parents(j).iter().all(|&k| g.has_edge(j, k)))
}

/// JSON edge-list form shared by both graph kinds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphFile {
    pub p: usize,
    pub directed: bool,
    pub edges: Vec<[usize; 2]>,
}

impl From<&Dag> for GraphFile {
    fn from(d: &Dag) -> Self {
        GraphFile {
            p: d.p(),
            directed: true,
            edges: d.edges().into_iter().map(|(u, v)| [u, v]).collect(),
        }
    }
}

impl From<&UGraph> for GraphFile {
    fn from(g: &UGraph) -> Self {
        GraphFile {
            p: g.p(),
            directed: false,
            edges: g.edges().into_iter().map(|(u, v)| [u, v]).collect(),
        }
    }
}

impl GraphFile {
    fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e[0], e[1])).collect()
    }

    pub fn to_dag(&self) -> Result<Dag> {
        if !self.directed {
            return Err(Error::invalid("expected a directed graph file"));
        }
        Dag::from_edges(self.p, &self.pairs())
    }

    pub fn to_ugraph(&self) -> Result<UGraph> {
        UGraph::from_edges(self.p, &self.pairs())
    }
}

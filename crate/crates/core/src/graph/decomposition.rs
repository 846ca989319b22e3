//! Tree decompositions and their nice (leaf/introduce/forget/join) normal form.
//!
//! Decompositions are built from elimination orderings: either the greedy
//! min-fill ordering or, for small graphs, an optimal ordering found by
//! dynamic programming over vertex subsets.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{mask_of, mask_to_vec, UGraph};
use crate::error::{Error, Result};

/// Largest graph for which the exact treewidth search is attempted.
pub const EXACT_TREEWIDTH_MAX_P: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionMethod {
    MinFill,
    ExactSmallP,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDecomposition {
    pub bags: Vec<Vec<usize>>,
    pub edges: Vec<(usize, usize)>,
}

impl TreeDecomposition {
    pub fn width(&self) -> usize {
        self.bags
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0)
            .saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.bags.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }
}

/// First property of a tree decomposition found to fail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NotATree,
    UncoveredVertex(usize),
    UncoveredEdge(usize, usize),
    DisconnectedOccurrence(usize),
    BadNiceNode { node: usize, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotATree => write!(f, "decomposition graph is not a tree"),
            Violation::UncoveredVertex(v) => write!(f, "(a) vertex {v} is in no bag"),
            Violation::UncoveredEdge(u, v) => write!(f, "(b) edge {{{u},{v}}} is in no bag"),
            Violation::DisconnectedOccurrence(v) => {
                write!(f, "(c) bags containing vertex {v} are not connected")
            }
            Violation::BadNiceNode { node, reason } => write!(f, "nice node {node}: {reason}"),
        }
    }
}

/// Checks properties (a)-(c) of a tree decomposition of `g`.
pub fn validate_decomposition(
    td: &TreeDecomposition,
    g: &UGraph,
) -> std::result::Result<(), Violation> {
    let k = td.bags.len();
    if k == 0 {
        return if g.p() == 0 { Ok(()) } else { Err(Violation::UncoveredVertex(0)) };
    }
    if td.edges.len() != k - 1 || td.edges.iter().any(|&(a, b)| a >= k || b >= k || a == b) {
        return Err(Violation::NotATree);
    }
    let adj = td.adjacency();
    if connected_subset(&adj, &(0..k).collect::<Vec<_>>()).is_none() {
        return Err(Violation::NotATree);
    }
    let p = g.p();
    let bag_masks: Vec<u64> = td.bags.iter().map(|b| mask_of(b)).collect();
    for v in 0..p {
        if !bag_masks.iter().any(|m| m & (1 << v) != 0) {
            return Err(Violation::UncoveredVertex(v));
        }
    }
    for (u, v) in g.edges() {
        let both = (1u64 << u) | (1u64 << v);
        if !bag_masks.iter().any(|m| m & both == both) {
            return Err(Violation::UncoveredEdge(u, v));
        }
    }
    for v in 0..p {
        let holders: Vec<usize> = (0..k).filter(|&t| bag_masks[t] & (1 << v) != 0).collect();
        if connected_subset(&adj, &holders).is_none() {
            return Err(Violation::DisconnectedOccurrence(v));
        }
    }
    Ok(())
}

// Some(()) if the induced subgraph of the tree on `nodes` is connected.
fn connected_subset(adj: &[Vec<usize>], nodes: &[usize]) -> Option<()> {
    if nodes.is_empty() {
        return Some(());
    }
    let member: BTreeSet<usize> = nodes.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut stack = vec![nodes[0]];
    seen.insert(nodes[0]);
    while let Some(t) = stack.pop() {
        for &u in &adj[t] {
            if member.contains(&u) && seen.insert(u) {
                stack.push(u);
            }
        }
    }
    (seen.len() == member.len()).then_some(())
}

/// Builds a tree decomposition of `g`. Disconnected graphs get one subtree per
/// component, linked into a single tree.
pub fn tree_decomposition(g: &UGraph, method: DecompositionMethod) -> Result<TreeDecomposition> {
    let p = g.p();
    if p > super::MAX_NODES {
        return Err(Error::invalid(format!("graph has {p} vertices, at most 64 supported")));
    }
    if p == 0 {
        return Ok(TreeDecomposition {
            bags: vec![Vec::new()],
            edges: Vec::new(),
        });
    }
    let order = match method {
        DecompositionMethod::MinFill => min_fill_order(g),
        DecompositionMethod::ExactSmallP => {
            if p > EXACT_TREEWIDTH_MAX_P {
                return Err(Error::CapExceeded(format!(
                    "exact treewidth limited to p <= {EXACT_TREEWIDTH_MAX_P}, got p = {p}"
                )));
            }
            exact_order(g)
        }
    };
    Ok(from_elimination_order(g, &order))
}

fn above(v: usize) -> u64 {
    if v >= 63 {
        0
    } else {
        !((1u64 << (v + 1)) - 1)
    }
}

fn adjacency_masks(g: &UGraph) -> Vec<u64> {
    (0..g.p()).map(|v| g.neighbor_mask(v)).collect()
}

fn min_fill_order(g: &UGraph) -> Vec<usize> {
    let p = g.p();
    let mut adj = adjacency_masks(g);
    let mut alive: u64 = if p == 64 { u64::MAX } else { (1u64 << p) - 1 };
    let mut order = Vec::with_capacity(p);
    while alive != 0 {
        let mut best: Option<(u32, u32, usize)> = None;
        for v in mask_to_vec(alive) {
            let nb = adj[v] & alive;
            let fill: u32 = mask_to_vec(nb)
                .into_iter()
                .map(|a| (nb & !adj[a] & above(a)).count_ones())
                .sum();
            let key = (fill, nb.count_ones(), v);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let (_, _, v) = best.expect("alive set is non-empty");
        let nb = adj[v] & alive;
        for a in mask_to_vec(nb) {
            adj[a] |= nb & !(1u64 << a);
        }
        alive &= !(1u64 << v);
        order.push(v);
    }
    order
}

// Vertices outside `s ∪ {v}` reachable from v through paths whose interior lies in s.
fn reach_through(adj: &[u64], s: u64, v: usize) -> u64 {
    let mut visited = 1u64 << v;
    let mut frontier = 1u64 << v;
    let mut out = 0u64;
    while frontier != 0 {
        let mut next = 0u64;
        for w in mask_to_vec(frontier) {
            next |= adj[w];
        }
        next &= !visited;
        visited |= next;
        out |= next & !s;
        frontier = next & s;
    }
    out
}

fn exact_order(g: &UGraph) -> Vec<usize> {
    let p = g.p();
    let adj = adjacency_masks(g);
    let full = (1usize << p) - 1;
    let mut tw = vec![i64::MAX; full + 1];
    let mut choice = vec![usize::MAX; full + 1];
    tw[0] = -1;
    for s in 1..=full {
        for v in 0..p {
            if s & (1 << v) == 0 {
                continue;
            }
            let rest = s & !(1 << v);
            let q = reach_through(&adj, rest as u64, v).count_ones() as i64;
            let cand = tw[rest].max(q);
            if cand < tw[s] {
                tw[s] = cand;
                choice[s] = v;
            }
        }
    }
    // choice[s] is eliminated last among s; unwind from the full set.
    let mut order = Vec::with_capacity(p);
    let mut s = full;
    while s != 0 {
        let v = choice[s];
        order.push(v);
        s &= !(1 << v);
    }
    order.reverse();
    order
}

fn from_elimination_order(g: &UGraph, order: &[usize]) -> TreeDecomposition {
    let p = g.p();
    let mut adj = adjacency_masks(g);
    let mut pos = vec![0usize; p];
    for (i, &v) in order.iter().enumerate() {
        pos[v] = i;
    }
    let mut alive: u64 = if p == 64 { u64::MAX } else { (1u64 << p) - 1 };
    let mut bags = Vec::with_capacity(p);
    let mut later = Vec::with_capacity(p);
    for &v in order {
        let nb = adj[v] & alive;
        for a in mask_to_vec(nb) {
            adj[a] |= nb & !(1u64 << a);
        }
        alive &= !(1u64 << v);
        bags.push(mask_to_vec(nb | (1u64 << v)));
        later.push(nb);
    }
    // bag i hangs below the bag of its earliest-eliminated later neighbour
    let mut edges = Vec::new();
    let mut roots = Vec::new();
    for (i, &nb) in later.iter().enumerate() {
        if nb == 0 {
            roots.push(i);
        } else {
            let next = mask_to_vec(nb).into_iter().min_by_key(|&u| pos[u]).unwrap();
            edges.push((i, pos[next]));
        }
    }
    for w in roots.windows(2) {
        edges.push((w[0], w[1]));
    }
    contract_redundant(TreeDecomposition { bags, edges })
}

// Merges every bag contained in a neighbouring bag into that neighbour.
fn contract_redundant(td: TreeDecomposition) -> TreeDecomposition {
    let k = td.bags.len();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for &(a, b) in &td.edges {
        adj[a].insert(b);
        adj[b].insert(a);
    }
    let masks: Vec<u64> = td.bags.iter().map(|b| mask_of(b)).collect();
    let mut alive = vec![true; k];
    loop {
        let mut changed = false;
        for t in 0..k {
            if !alive[t] {
                continue;
            }
            let sup = adj[t]
                .iter()
                .copied()
                .find(|&u| masks[t] & !masks[u] == 0);
            if let Some(u) = sup {
                let others: Vec<usize> = adj[t].iter().copied().filter(|&x| x != u).collect();
                for x in others {
                    adj[x].remove(&t);
                    adj[x].insert(u);
                    adj[u].insert(x);
                }
                adj[u].remove(&t);
                adj[t].clear();
                alive[t] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut remap = vec![usize::MAX; k];
    let mut bags = Vec::new();
    for t in 0..k {
        if alive[t] {
            remap[t] = bags.len();
            bags.push(td.bags[t].clone());
        }
    }
    let mut edges = Vec::new();
    for t in 0..k {
        if !alive[t] {
            continue;
        }
        for &u in &adj[t] {
            if t < u {
                edges.push((remap[t], remap[u]));
            }
        }
    }
    edges.sort_unstable();
    TreeDecomposition { bags, edges }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "vertex")]
pub enum NiceKind {
    Leaf,
    Introduce(usize),
    Forget(usize),
    Join,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NiceNode {
    pub bag: Vec<usize>,
    pub kind: NiceKind,
    pub children: Vec<usize>,
}

/// Rooted nice tree decomposition. Nodes are stored children-first, so a
/// forward scan visits every child before its parent. Leaves have empty bags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NiceTreeDecomposition {
    pub nodes: Vec<NiceNode>,
    pub root: usize,
}

impl NiceTreeDecomposition {
    pub fn width(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.bag.len())
            .max()
            .unwrap_or(0)
            .saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&NiceKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    /// The underlying (unrooted) tree decomposition.
    pub fn as_tree_decomposition(&self) -> TreeDecomposition {
        let mut edges = Vec::new();
        for (t, n) in self.nodes.iter().enumerate() {
            for &c in &n.children {
                edges.push((c, t));
            }
        }
        TreeDecomposition {
            bags: self.nodes.iter().map(|n| n.bag.clone()).collect(),
            edges,
        }
    }

    /// Kind invariants plus decomposition properties (a)-(c) for `g`.
    pub fn validate(&self, g: &UGraph) -> std::result::Result<(), Violation> {
        for (t, n) in self.nodes.iter().enumerate() {
            let bad = |reason: &str| Violation::BadNiceNode {
                node: t,
                reason: reason.to_string(),
            };
            if n.children.iter().any(|&c| c >= t) {
                return Err(bad("child stored after parent"));
            }
            match n.kind {
                NiceKind::Leaf => {
                    if !n.children.is_empty() || !n.bag.is_empty() {
                        return Err(bad("leaf must be childless with an empty bag"));
                    }
                }
                NiceKind::Join => {
                    if n.children.len() != 2
                        || n.children.iter().any(|&c| self.nodes[c].bag != n.bag)
                    {
                        return Err(bad("join needs two children with identical bags"));
                    }
                }
                NiceKind::Introduce(v) => {
                    let [c] = n.children[..] else {
                        return Err(bad("introduce needs one child"));
                    };
                    let mut expect = self.nodes[c].bag.clone();
                    if expect.contains(&v) {
                        return Err(bad("introduced vertex already in child bag"));
                    }
                    expect.push(v);
                    expect.sort_unstable();
                    if expect != n.bag {
                        return Err(bad("introduce bag mismatch"));
                    }
                }
                NiceKind::Forget(v) => {
                    let [c] = n.children[..] else {
                        return Err(bad("forget needs one child"));
                    };
                    let mut expect = n.bag.clone();
                    if expect.contains(&v) {
                        return Err(bad("forgotten vertex still in bag"));
                    }
                    expect.push(v);
                    expect.sort_unstable();
                    if expect != self.nodes[c].bag {
                        return Err(bad("forget bag mismatch"));
                    }
                }
            }
        }
        validate_decomposition(&self.as_tree_decomposition(), g)
    }
}

struct NiceBuilder {
    nodes: Vec<NiceNode>,
}

impl NiceBuilder {
    fn push(&mut self, bag: Vec<usize>, kind: NiceKind, children: Vec<usize>) -> usize {
        self.nodes.push(NiceNode {
            bag,
            kind,
            children,
        });
        self.nodes.len() - 1
    }

    // Forget then introduce, one vertex at a time, until the bag equals `target`.
    fn chain(&mut self, mut top: usize, target: &[usize]) -> usize {
        let current = self.nodes[top].bag.clone();
        for &v in current.iter().filter(|v| !target.contains(v)) {
            let bag: Vec<usize> = self.nodes[top].bag.iter().copied().filter(|&x| x != v).collect();
            top = self.push(bag, NiceKind::Forget(v), vec![top]);
        }
        for &v in target.iter().filter(|v| !current.contains(v)) {
            let mut bag = self.nodes[top].bag.clone();
            bag.push(v);
            bag.sort_unstable();
            top = self.push(bag, NiceKind::Introduce(v), vec![top]);
        }
        top
    }

    fn build(&mut self, td: &TreeDecomposition, adj: &[Vec<usize>], t: usize, parent: usize) -> usize {
        let mut children: Vec<usize> = adj[t].iter().copied().filter(|&c| c != parent).collect();
        children.sort_by_key(|&c| (td.bags[c].first().copied().unwrap_or(usize::MAX), c));
        let target = &td.bags[t];
        if children.is_empty() {
            let leaf = self.push(Vec::new(), NiceKind::Leaf, Vec::new());
            return self.chain(leaf, target);
        }
        let tops: Vec<usize> = children
            .into_iter()
            .map(|c| {
                let sub = self.build(td, adj, c, t);
                self.chain(sub, target)
            })
            .collect();
        let mut acc = tops[0];
        for &next in &tops[1..] {
            acc = self.push(target.clone(), NiceKind::Join, vec![acc, next]);
        }
        acc
    }
}

/// Converts a tree decomposition into nice form with the same width. The root
/// is the first node whose bag holds the smallest vertex label.
pub fn make_nice(td: &TreeDecomposition) -> NiceTreeDecomposition {
    let mut builder = NiceBuilder { nodes: Vec::new() };
    if td.bags.is_empty() {
        let root = builder.push(Vec::new(), NiceKind::Leaf, Vec::new());
        return NiceTreeDecomposition {
            nodes: builder.nodes,
            root,
        };
    }
    let mut sorted = td.clone();
    for b in &mut sorted.bags {
        b.sort_unstable();
        b.dedup();
    }
    let min_vertex = sorted.bags.iter().filter_map(|b| b.first()).min().copied();
    let root_bag = match min_vertex {
        Some(v) => sorted.bags.iter().position(|b| b.contains(&v)).unwrap(),
        None => 0,
    };
    let adj = sorted.adjacency();
    let root = builder.build(&sorted, &adj, root_bag, usize::MAX);
    NiceTreeDecomposition {
        nodes: builder.nodes,
        root,
    }
}

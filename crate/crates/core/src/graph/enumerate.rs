//! Exhaustive enumeration of the DAGs whose skeleton lies inside an
//! undirected graph: every edge is absent, oriented one way, or the other,
//! and partial assignments that close a directed cycle are pruned.

use super::{mask_to_vec, Dag, UGraph, MAX_NODES};
use crate::error::{Error, Result};

/// Streaming iterator over parent-mask vectors of consistent DAGs.
///
/// Emission order is deterministic: edges are taken in sorted order and each
/// edge tries "absent", then `u -> v`, then `v -> u`.
#[derive(Debug, Clone)]
pub struct ConsistentDags {
    edges: Vec<(usize, usize)>,
    parents: Vec<u64>,
    children: Vec<u64>,
    next_option: Vec<u8>,
    applied: Vec<u8>,
    depth: usize,
    emitted_full: bool,
    finished: bool,
}

impl ConsistentDags {
    pub fn new(g: &UGraph) -> Result<Self> {
        if g.p() > MAX_NODES {
            return Err(Error::invalid("enumeration supports at most 64 vertices"));
        }
        let edges = g.edges();
        let m = edges.len();
        Ok(ConsistentDags {
            edges,
            parents: vec![0; g.p()],
            children: vec![0; g.p()],
            next_option: vec![0; m + 1],
            applied: vec![0; m],
            depth: 0,
            emitted_full: false,
            finished: false,
        })
    }

    // Is `to` reachable from `from` along current arcs?
    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = 1u64 << from;
        let mut frontier = 1u64 << from;
        while frontier != 0 {
            let mut next = 0u64;
            for w in mask_to_vec(frontier) {
                next |= self.children[w];
            }
            if next & (1u64 << to) != 0 {
                return true;
            }
            next &= !seen;
            seen |= next;
            frontier = next;
        }
        false
    }

    fn try_apply(&mut self, i: usize, opt: u8) -> bool {
        let (u, v) = self.edges[i];
        let (from, to) = match opt {
            0 => return true,
            1 => (u, v),
            _ => (v, u),
        };
        if self.reaches(to, from) {
            return false;
        }
        self.children[from] |= 1 << to;
        self.parents[to] |= 1 << from;
        true
    }

    fn undo(&mut self, i: usize) {
        let (u, v) = self.edges[i];
        let (from, to) = match self.applied[i] {
            0 => return,
            1 => (u, v),
            _ => (v, u),
        };
        self.children[from] &= !(1 << to);
        self.parents[to] &= !(1 << from);
    }

    /// Advances to the next complete assignment; returns the parent masks.
    pub fn next_masks(&mut self) -> Option<&[u64]> {
        if self.finished {
            return None;
        }
        let m = self.edges.len();
        if self.emitted_full {
            self.emitted_full = false;
            if m == 0 {
                self.finished = true;
                return None;
            }
            self.depth = m - 1;
            self.undo(self.depth);
        }
        loop {
            if self.depth == m {
                self.emitted_full = true;
                return Some(&self.parents);
            }
            let d = self.depth;
            let mut advanced = false;
            while self.next_option[d] < 3 {
                let opt = self.next_option[d];
                self.next_option[d] += 1;
                if self.try_apply(d, opt) {
                    self.applied[d] = opt;
                    self.depth += 1;
                    self.next_option[self.depth] = 0;
                    advanced = true;
                    break;
                }
            }
            if advanced {
                continue;
            }
            if d == 0 {
                self.finished = true;
                return None;
            }
            self.depth = d - 1;
            self.undo(self.depth);
        }
    }
}

impl Iterator for ConsistentDags {
    type Item = Dag;

    fn next(&mut self) -> Option<Dag> {
        self.next_masks().map(Dag::from_masks_unchecked)
    }
}

/// All DAGs with parent sets inside the neighborhoods of `g`.
pub fn enumerate_consistent_dags(g: &UGraph) -> Result<ConsistentDags> {
    ConsistentDags::new(g)
}

/// Counts consistent DAGs, failing once the count passes `cap`.
pub fn count_consistent_dags(g: &UGraph, cap: usize) -> Result<usize> {
    let mut it = ConsistentDags::new(g)?;
    let mut n = 0usize;
    while it.next_masks().is_some() {
        n += 1;
        if n > cap {
            return Err(Error::CapExceeded(format!(
                "more than {cap} consistent DAGs"
            )));
        }
    }
    Ok(n)
}

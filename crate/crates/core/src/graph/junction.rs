//! Junction trees of chordal graphs.

use serde::{Deserialize, Serialize};

use super::{mask_of, mask_to_vec, UGraph};

/// Maximal cliques linked by a maximum-weight spanning forest on clique
/// intersections, which satisfies the running intersection property for
/// chordal graphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JunctionTree {
    pub cliques: Vec<Vec<usize>>,
    /// `(clique_a, clique_b, separator)` for every junction-tree edge.
    pub separators: Vec<(usize, usize, Vec<usize>)>,
}

impl JunctionTree {
    pub fn all_separators_singleton(&self) -> bool {
        self.separators.iter().all(|(_, _, s)| s.len() == 1)
    }
}

// Maximum cardinality search; returns the visit order.
fn mcs_order(g: &UGraph) -> Vec<usize> {
    let p = g.p();
    let mut weight = vec![0usize; p];
    let mut done = vec![false; p];
    let mut order = Vec::with_capacity(p);
    for _ in 0..p {
        let v = (0..p)
            .filter(|&v| !done[v])
            .max_by_key(|&v| (weight[v], std::cmp::Reverse(v)))
            .unwrap();
        done[v] = true;
        order.push(v);
        for &w in g.neighbors(v) {
            if !done[w] {
                weight[w] += 1;
            }
        }
    }
    order
}

/// Junction tree of a chordal graph, or `None` when `g` is not chordal.
pub fn clique_decomposition(g: &UGraph) -> Option<JunctionTree> {
    let p = g.p();
    let order = mcs_order(g);
    let mut pos = vec![0usize; p];
    for (i, &v) in order.iter().enumerate() {
        pos[v] = i;
    }
    // reverse MCS order is a perfect elimination ordering iff g is chordal
    let mut candidates: Vec<u64> = Vec::new();
    for &v in &order {
        let earlier: Vec<usize> = g
            .neighbors(v)
            .iter()
            .copied()
            .filter(|&w| pos[w] < pos[v])
            .collect();
        if let Some(&last) = earlier.iter().max_by_key(|&&w| pos[w]) {
            let rest = mask_of(&earlier) & !(1u64 << last);
            let last_earlier: u64 = g
                .neighbors(last)
                .iter()
                .filter(|&&w| pos[w] < pos[last])
                .fold(0, |m, &w| m | (1u64 << w));
            if rest & !last_earlier != 0 {
                return None;
            }
        }
        candidates.push(mask_of(&earlier) | (1u64 << v));
    }
    let mut cliques: Vec<u64> = Vec::new();
    for &c in &candidates {
        if candidates.iter().any(|&d| d != c && c & !d == 0) {
            continue;
        }
        if !cliques.contains(&c) {
            cliques.push(c);
        }
    }
    cliques.sort_by_key(|&c| mask_to_vec(c));

    // Kruskal on intersection sizes, heaviest first
    let k = cliques.len();
    let mut cand = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let w = (cliques[a] & cliques[b]).count_ones();
            if w > 0 {
                cand.push((w, a, b));
            }
        }
    }
    cand.sort_by(|x, y| y.0.cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut comp: Vec<usize> = (0..k).collect();
    fn find(c: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while c[r] != r {
            r = c[r];
        }
        c[x] = r;
        r
    }
    let mut separators = Vec::new();
    for (_, a, b) in cand {
        let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
        if ra != rb {
            comp[ra] = rb;
            separators.push((a, b, mask_to_vec(cliques[a] & cliques[b])));
        }
    }
    Some(JunctionTree {
        cliques: cliques.into_iter().map(mask_to_vec).collect(),
        separators,
    })
}

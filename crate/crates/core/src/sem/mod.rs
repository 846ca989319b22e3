//! Linear structural equation models `X = Bᵀ X + ε` with independent errors.
//!
//! `B[(j, k)]` is the weight of `X_j` in the equation for `X_k`; `omega[j]`
//! is the error variance of node `j`. A topological order is stored next to
//! `B` so user-supplied DAGs keep their own labels.

mod data;
mod generate;
mod noise;

pub use data::{corrupt_additive, corrupt_missing, CorruptedData, Corruption, DataMatrix};
pub use generate::{random_sem, random_tree_dag, chain_dag, SemStructure};
pub use noise::{NoiseFamily, NoiseSpec};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dag, UGraph};

/// Relative zero tolerance for precision supports.
pub const SUPPORT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSem {
    weights: DMatrix<f64>,
    omega: Vec<f64>,
    order: Vec<usize>,
}

impl LinearSem {
    /// Builds a SEM, deriving the topological order from the support of `weights`.
    pub fn new(weights: DMatrix<f64>, omega: Vec<f64>) -> Result<Self> {
        let dag = support_dag(&weights)?;
        let order = dag.topological_sort()?;
        Self::with_order(weights, omega, order)
    }

    pub fn with_order(weights: DMatrix<f64>, omega: Vec<f64>, order: Vec<usize>) -> Result<Self> {
        let p = omega.len();
        if weights.nrows() != p || weights.ncols() != p {
            return Err(Error::invalid(format!(
                "weight matrix is {}x{}, expected {p}x{p}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if let Some((j, w)) = omega.iter().enumerate().find(|(_, &w)| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("error variance omega[{j}] = {w} must be positive")));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        let mut seen = vec![false; p];
        if order.len() != p || order.iter().any(|&v| v >= p || std::mem::replace(&mut seen[v], true)) {
            return Err(Error::invalid("order is not a permutation of 0..p"));
        }
        let mut pos = vec![0usize; p];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        for j in 0..p {
            for k in 0..p {
                if weights[(j, k)] != 0.0 && pos[j] >= pos[k] {
                    return Err(Error::invalid(format!(
                        "edge {j} -> {k} contradicts the topological order"
                    )));
                }
            }
        }
        Ok(LinearSem {
            weights,
            omega,
            order,
        })
    }

    pub fn p(&self) -> usize {
        self.omega.len()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn dag(&self) -> Dag {
        support_dag(&self.weights).expect("validated at construction")
    }

    fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0usize; self.p()];
        for (i, &v) in self.order.iter().enumerate() {
            pos[v] = i;
        }
        pos
    }

    /// `(I - B)^{-1}`, from a unit upper-triangular solve in order coordinates.
    fn inverse_i_minus_b(&self) -> DMatrix<f64> {
        let p = self.p();
        let ord = &self.order;
        let permuted = DMatrix::from_fn(p, p, |a, b| {
            let id = if a == b { 1.0 } else { 0.0 };
            id - self.weights[(ord[a], ord[b])]
        });
        let inv_perm = permuted
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .expect("unit diagonal is never singular");
        let mut inv = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                inv[(ord[a], ord[b])] = inv_perm[(a, b)];
            }
        }
        inv
    }

    /// `Σ = (I - B)^{-T} Ω (I - B)^{-1}`.
    pub fn population_covariance(&self) -> DMatrix<f64> {
        let inv = self.inverse_i_minus_b();
        let omega = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.omega));
        let sigma = inv.transpose() * omega * &inv;
        crate::linalg::symmetrize(&sigma)
    }

    /// `Θ = (I - B) Ω^{-1} (I - B)ᵀ`.
    pub fn population_precision(&self) -> DMatrix<f64> {
        let p = self.p();
        let a = DMatrix::identity(p, p) - &self.weights;
        let inv_omega = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 / self.omega[i] } else { 0.0 });
        crate::linalg::symmetrize(&(&a * inv_omega * a.transpose()))
    }

    /// Entry `(j, k)` of the precision matrix from the closed form in terms of
    /// `B` and `Ω`, summing over nodes later than both in the order.
    pub fn precision_entry(&self, j: usize, k: usize) -> f64 {
        let pos = self.positions();
        let b = &self.weights;
        let w = &self.omega;
        if j == k {
            let later: f64 = (0..self.p())
                .filter(|&l| pos[l] > pos[j])
                .map(|l| b[(j, l)] * b[(j, l)] / w[l])
                .sum();
            return 1.0 / w[j] + later;
        }
        let (a, c) = if pos[j] < pos[k] { (j, k) } else { (k, j) };
        self.offdiag_terms(a, c, &pos).0
    }

    // (Θ_ac value, structurally nonzero) for pos[a] < pos[c].
    fn offdiag_terms(&self, a: usize, c: usize, pos: &[usize]) -> (f64, bool) {
        let b = &self.weights;
        let mut value = -b[(a, c)] / self.omega[c];
        let mut structural = b[(a, c)] != 0.0;
        for l in 0..self.p() {
            if pos[l] > pos[c] {
                let prod = b[(a, l)] * b[(c, l)];
                if prod != 0.0 {
                    structural = true;
                    value += prod / self.omega[l];
                }
            }
        }
        (value, structural)
    }

    /// Pairs `(earlier, later)` in the topological order whose precision entry
    /// cancels to within `tol` although the moral graph has the edge.
    pub fn check_faithfulness(&self, tol: f64) -> Vec<(usize, usize)> {
        let pos = self.positions();
        let mut out = Vec::new();
        for (i, &a) in self.order.iter().enumerate() {
            for &c in &self.order[i + 1..] {
                let (value, structural) = self.offdiag_terms(a, c, &pos);
                if structural && value.abs() <= tol {
                    out.push((a, c));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Off-diagonal support of `Θ`: entries above `1e-8` after dividing by the
    /// largest diagonal entry.
    pub fn precision_support(&self) -> UGraph {
        let theta = self.population_precision();
        let scale = theta.diagonal().max();
        let p = self.p();
        let edges: Vec<(usize, usize)> = (0..p)
            .flat_map(|j| ((j + 1)..p).map(move |k| (j, k)))
            .filter(|&(j, k)| theta[(j, k)].abs() / scale > SUPPORT_TOL)
            .collect();
        UGraph::from_edges(p, &edges).expect("pairs are in range")
    }

    /// Draws `n` i.i.d. rows, generating coordinates in topological order.
    pub fn sample(&self, n: usize, noise: &NoiseSpec, seed: u64) -> Result<DataMatrix> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let p = self.p();
        if noise.len() != p {
            return Err(Error::invalid(format!(
                "noise spec has {} families for p = {p}",
                noise.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parents: Vec<Vec<(usize, f64)>> = (0..p)
            .map(|k| {
                (0..p)
                    .filter(|&j| self.weights[(j, k)] != 0.0)
                    .map(|j| (j, self.weights[(j, k)]))
                    .collect()
            })
            .collect();
        let sd: Vec<f64> = self.omega.iter().map(|w| w.sqrt()).collect();
        let mut values = DMatrix::zeros(n, p);
        let mut row = vec![0.0; p];
        for i in 0..n {
            for &k in &self.order {
                let mean: f64 = parents[k].iter().map(|&(j, w)| w * row[j]).sum();
                row[k] = mean + sd[k] * noise.family(k).draw_standard(&mut rng);
            }
            for k in 0..p {
                values[(i, k)] = row[k];
            }
        }
        Ok(DataMatrix::new(values))
    }

    pub fn to_file(&self) -> SemFile {
        let mut edges = Vec::new();
        for j in 0..self.p() {
            for k in 0..self.p() {
                let w = self.weights[(j, k)];
                if w != 0.0 {
                    edges.push(SemEdge { from: j, to: k, weight: w });
                }
            }
        }
        SemFile {
            p: self.p(),
            order: self.order.clone(),
            edges,
            omega: self.omega.clone(),
        }
    }

    pub fn from_file(f: &SemFile) -> Result<Self> {
        if f.omega.len() != f.p {
            return Err(Error::invalid("omega length does not match p"));
        }
        let mut b = DMatrix::zeros(f.p, f.p);
        for e in &f.edges {
            if e.from >= f.p || e.to >= f.p || e.from == e.to {
                return Err(Error::invalid(format!("bad edge {} -> {}", e.from, e.to)));
            }
            b[(e.from, e.to)] = e.weight;
        }
        Self::with_order(b, f.omega.clone(), f.order.clone())
    }
}

fn support_dag(weights: &DMatrix<f64>) -> Result<Dag> {
    let p = weights.nrows();
    if weights.ncols() != p {
        return Err(Error::invalid("weight matrix must be square"));
    }
    let parents = (0..p)
        .map(|k| (0..p).filter(|&j| weights[(j, k)] != 0.0).collect())
        .collect();
    Dag::from_parents(parents)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// JSON form: `{p, order, edges: [{from, to, weight}], omega}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemFile {
    pub p: usize,
    pub order: Vec<usize>,
    pub edges: Vec<SemEdge>,
    pub omega: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_one() -> LinearSem {
        LinearSem::new(DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.0, 0.0]), vec![1.0, 0.25]).unwrap()
    }

    fn v_structure() -> LinearSem {
        let mut b = DMatrix::zeros(3, 3);
        b[(0, 2)] = 1.0;
        b[(1, 2)] = 1.0;
        LinearSem::new(b, vec![1.0; 3]).unwrap()
    }

    #[test]
    fn identity_covariance_without_edges() {
        let sem = LinearSem::new(DMatrix::zeros(3, 3), vec![1.0; 3]).unwrap();
        assert_eq!(sem.population_covariance(), DMatrix::identity(3, 3));
        let diag = LinearSem::new(DMatrix::zeros(2, 2), vec![4.0, 9.0]).unwrap();
        let theta = diag.population_precision();
        assert_relative_eq!(theta, DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 1.0 / 9.0]));
    }

    #[test]
    fn example_one_covariance_and_precision() {
        let sem = example_one();
        let sigma = sem.population_covariance();
        assert_relative_eq!(
            sigma,
            DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 0.5]),
            epsilon = 1e-15
        );
        let theta = sem.population_precision();
        assert_relative_eq!(theta, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 4.0]), epsilon = 1e-15);
        assert_relative_eq!(sem.precision_entry(0, 1), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn v_structure_precision() {
        let sem = v_structure();
        let expected = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -1.0, 1.0, 2.0, -1.0, -1.0, -1.0, 1.0]);
        assert_relative_eq!(sem.population_precision(), expected, epsilon = 1e-15);
        assert_relative_eq!(sem.precision_entry(0, 1), 1.0);
        let sigma = sem.population_covariance();
        let inv = expected.try_inverse().unwrap();
        assert_relative_eq!(sigma, inv, epsilon = 1e-12);
    }

    #[test]
    fn childless_diagonal_is_inverse_variance() {
        let sem = LinearSem::new(
            DMatrix::from_row_slice(3, 3, &[0.0, 0.7, 0.0, 0.0, 0.0, -1.3, 0.0, 0.0, 0.0]),
            vec![0.5, 2.0, 3.0],
        )
        .unwrap();
        assert_relative_eq!(sem.precision_entry(2, 2), 1.0 / 3.0);
    }

    #[test]
    fn faithfulness_detects_exact_cancellation() {
        assert!(LinearSem::new(DMatrix::zeros(3, 3), vec![1.0; 3])
            .unwrap()
            .check_faithfulness(1e-12)
            .is_empty());
        let mut b = DMatrix::zeros(3, 3);
        b[(0, 1)] = 1.0;
        b[(0, 2)] = 1.0;
        b[(1, 2)] = 1.0;
        let sem = LinearSem::new(b, vec![1.0; 3]).unwrap();
        assert_eq!(sem.check_faithfulness(1e-12), vec![(0, 1)]);
    }

    #[test]
    fn v_structure_support_is_moral() {
        let sem = v_structure();
        assert_eq!(sem.precision_support(), crate::graph::moralize(&sem.dag()));
    }

    #[test]
    fn order_must_be_topological() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(LinearSem::with_order(b.clone(), vec![1.0, 1.0], vec![1, 0]).is_err());
        assert!(LinearSem::with_order(b, vec![1.0, 0.0], vec![0, 1]).is_err());
        let cyclic = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(LinearSem::new(cyclic, vec![1.0, 1.0]), Err(Error::Cycle { .. })));
    }

    #[test]
    fn non_identity_order_is_honoured() {
        // 2 -> 0 -> 1 with natural labels
        let mut b = DMatrix::zeros(3, 3);
        b[(2, 0)] = 0.8;
        b[(0, 1)] = -1.5;
        let sem = LinearSem::new(b, vec![1.0, 0.5, 2.0]).unwrap();
        assert_eq!(sem.order(), &[2, 0, 1]);
        let sigma = sem.population_covariance();
        let theta = sem.population_precision();
        assert_relative_eq!(&theta * &sigma, DMatrix::identity(3, 3), epsilon = 1e-12);
        for j in 0..3 {
            for k in 0..3 {
                assert_relative_eq!(sem.precision_entry(j, k), theta[(j, k)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let sem = example_one();
        let noise = NoiseSpec::uniform_family(2, NoiseFamily::Gaussian);
        let a = sem.sample(1, &noise, 42).unwrap();
        let b = sem.sample(1, &noise, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sem.sample(1, &noise, 43).unwrap());
    }

    fn sample_cov(d: &DataMatrix) -> DMatrix<f64> {
        let x = d.values();
        x.transpose() * x / d.n() as f64
    }

    #[test]
    fn sample_moments_match_population() {
        let iid = LinearSem::new(DMatrix::zeros(3, 3), vec![1.0; 3]).unwrap();
        let d = iid.sample(100_000, &NoiseSpec::gaussian(3), 1).unwrap();
        assert!((sample_cov(&d) - DMatrix::<f64>::identity(3, 3)).amax() < 0.05);
        let sem = example_one();
        let d = sem.sample(100_000, &NoiseSpec::gaussian(2), 2).unwrap();
        assert!((sample_cov(&d) - sem.population_covariance()).amax() < 0.05);
    }

    #[test]
    fn sem_file_roundtrip() {
        let sem = v_structure();
        let json = serde_json::to_string(&sem.to_file()).unwrap();
        let back = LinearSem::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, sem);
    }
}

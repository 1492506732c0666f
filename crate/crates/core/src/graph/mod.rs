//! Graph representation, dataset files, batching and the synthetic
//! long-range task.

mod batch;
mod io;
mod synthetic;

pub use batch::{batch_graphs, GraphBatch};
pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset};
pub use synthetic::{generate_lri_task, path_graph};

use std::collections::{HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{SparseMatrix, Tensor};

/// A labelled node pair for link-level (contact) tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairLabel {
    pub u: usize,
    pub v: usize,
    pub contact: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    /// Graph-level class index.
    Class(usize),
    /// Graph-level regression target.
    Vector(Vec<f64>),
    /// Node-pair labels.
    Pairs(Vec<PairLabel>),
}

/// Undirected graph with per-node features.
///
/// Each undirected edge is stored once; self-loops are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct MolecularGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_features: Vec<Vec<f64>>,
    label: Option<Label>,
}

impl MolecularGraph {
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        node_features: Vec<Vec<f64>>,
        label: Option<Label>,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Graph("graph has no nodes".into()));
        }
        if node_features.len() != num_nodes {
            return Err(Error::Graph(format!(
                "{} feature rows for {num_nodes} nodes",
                node_features.len()
            )));
        }
        let dim = node_features[0].len();
        if let Some(row) = node_features.iter().position(|r| r.len() != dim) {
            return Err(Error::Graph(format!(
                "feature row {row} has length {} (expected {dim})",
                node_features[row].len()
            )));
        }
        if node_features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Graph("non-finite node feature".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Graph(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop on node {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Graph(format!("duplicate edge ({u}, {v})")));
            }
        }
        match &label {
            Some(Label::Pairs(pairs)) => {
                if let Some(p) = pairs.iter().find(|p| p.u >= num_nodes || p.v >= num_nodes) {
                    return Err(Error::Graph(format!(
                        "pair label ({}, {}) out of range for {num_nodes} nodes",
                        p.u, p.v
                    )));
                }
            }
            Some(Label::Vector(v)) if v.iter().any(|x| !x.is_finite()) => {
                return Err(Error::Graph("non-finite regression label".into()));
            }
            _ => {}
        }
        Ok(Self {
            num_nodes,
            edges,
            node_features,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &[Vec<f64>] {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features[0].len()
    }

    pub fn label(&self) -> Option<&Label> {
        self.label.as_ref()
    }

    pub fn with_label(mut self, label: Option<Label>) -> Result<Self> {
        self.label = label;
        Self::new(self.num_nodes, self.edges, self.node_features, self.label)
    }

    pub fn with_features(self, node_features: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.num_nodes, self.edges, node_features, self.label)
    }

    /// Degree of each node, not counting the implicit self-loop.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Breadth-first hop distances from `source`; `None` for unreachable nodes.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.neighbors();
        let mut dist = vec![None; self.num_nodes];
        let mut queue = VecDeque::from([source]);
        dist[source] = Some(0);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("visited");
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn features_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_f64_rows(&self.node_features).expect("validated rectangular features")
    }

    /// Symmetric-normalized adjacency with self-loops, `D̂^-1/2 (A + I) D̂^-1/2`,
    /// where `d̂ = degree + 1`.
    pub fn gcn_matrix<T: Scalar>(&self) -> SparseMatrix<T> {
        let inv_sqrt: Vec<f64> = self
            .degrees()
            .iter()
            .map(|&d| 1.0 / ((d + 1) as f64).sqrt())
            .collect();
        let mut triplets = Vec::with_capacity(self.num_nodes + 2 * self.edges.len());
        for v in 0..self.num_nodes {
            triplets.push((v, v, T::of(inv_sqrt[v] * inv_sqrt[v])));
        }
        for &(u, v) in &self.edges {
            let w = T::of(inv_sqrt[u] * inv_sqrt[v]);
            triplets.push((u, v, w));
            triplets.push((v, u, w));
        }
        SparseMatrix::from_triplets(self.num_nodes, self.num_nodes, &triplets)
            .expect("validated edge indices")
    }

    /// Unweighted adjacency with self-loops, `A + I`.
    pub fn gin_matrix<T: Scalar>(&self) -> SparseMatrix<T> {
        let mut triplets = Vec::with_capacity(self.num_nodes + 2 * self.edges.len());
        for v in 0..self.num_nodes {
            triplets.push((v, v, T::one()));
        }
        for &(u, v) in &self.edges {
            triplets.push((u, v, T::one()));
            triplets.push((v, u, T::one()));
        }
        SparseMatrix::from_triplets(self.num_nodes, self.num_nodes, &triplets)
            .expect("validated edge indices")
    }

    /// Relabels node `i` as `perm[i]` in edges, features and pair labels.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_nodes)?;
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut feats = vec![Vec::new(); self.num_nodes];
        for (i, row) in self.node_features.iter().enumerate() {
            feats[perm[i]] = row.clone();
        }
        let label = self.label.as_ref().map(|l| match l {
            Label::Pairs(pairs) => Label::Pairs(
                pairs
                    .iter()
                    .map(|p| PairLabel {
                        u: perm[p.u],
                        v: perm[p.v],
                        contact: p.contact,
                    })
                    .collect(),
            ),
            other => other.clone(),
        });
        Self::new(self.num_nodes, edges, feats, label)
    }
}

/// Free-function form of [`MolecularGraph::permute`].
pub fn permute_graph(g: &MolecularGraph, perm: &[usize]) -> Result<MolecularGraph> {
    g.permute(perm)
}

pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permutation has {} entries for {n} nodes",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument(format!("not a bijection: {perm:?}")));
        }
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> MolecularGraph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(0.3) {
                    edges.push((u, v));
                }
            }
        }
        let feats = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen()]).collect();
        let pairs = vec![PairLabel { u: 0, v: n - 1, contact: true }];
        MolecularGraph::new(n, edges, feats, Some(Label::Pairs(pairs))).unwrap()
    }

    #[test]
    fn rejects_out_of_range_edge() {
        let err = MolecularGraph::new(3, vec![(0, 5)], vec![vec![1.0]; 3], None).unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        assert!(MolecularGraph::new(2, vec![(1, 1)], vec![vec![0.0]; 2], None).is_err());
        assert!(MolecularGraph::new(2, vec![(0, 1), (1, 0)], vec![vec![0.0]; 2], None).is_err());
    }

    #[test]
    fn rejects_bad_pair_label() {
        let l = Label::Pairs(vec![PairLabel { u: 0, v: 2, contact: false }]);
        assert!(MolecularGraph::new(2, vec![], vec![vec![0.0]; 2], Some(l)).is_err());
    }

    #[test]
    fn identity_permutation_is_noop() {
        let g = random_graph(&mut ChaCha8Rng::seed_from_u64(0), 7);
        let id: Vec<usize> = (0..7).collect();
        assert_eq!(g.permute(&id).unwrap(), g);
    }

    #[test]
    fn permutation_then_inverse_restores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(&mut rng, 9);
        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut rng);
        let back = g.permute(&perm).unwrap().permute(&invert_permutation(&perm)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn degree_multiset_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let g = random_graph(&mut rng, 12);
            let mut perm: Vec<usize> = (0..12).collect();
            perm.shuffle(&mut rng);
            let mut a = g.degrees();
            let mut b = g.permute(&perm).unwrap().degrees();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn non_bijection_rejected() {
        let g = random_graph(&mut ChaCha8Rng::seed_from_u64(3), 3);
        assert!(g.permute(&[0, 0, 1]).is_err());
        assert!(g.permute(&[0, 1]).is_err());
    }

    #[test]
    fn gcn_matrix_on_two_node_path() {
        let g = MolecularGraph::new(2, vec![(0, 1)], vec![vec![0.0]; 2], None).unwrap();
        let m: SparseMatrix<f64> = g.gcn_matrix();
        for v in m.to_dense() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn hop_distance_on_path() {
        let g = path_graph(6, 2, 0, 1).unwrap();
        assert_eq!(g.hop_distances(0)[5], Some(5));
    }
}

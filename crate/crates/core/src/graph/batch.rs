use std::sync::Arc;

use super::MolecularGraph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::SparseMatrix;

/// Several graphs merged block-diagonally into one disconnected graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    graphs: Vec<MolecularGraph>,
    offsets: Vec<usize>,
    merged: MolecularGraph,
}

impl GraphBatch {
    pub fn graphs(&self) -> &[MolecularGraph] {
        &self.graphs
    }

    /// Prefix sums of node counts; graph `i` owns rows `offsets[i]..offsets[i + 1]`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn merged(&self) -> &MolecularGraph {
        &self.merged
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn total_nodes(&self) -> usize {
        *self.offsets.last().expect("offsets start at 0")
    }

    /// `G × N` matrix averaging each graph's node rows.
    pub fn mean_pool_matrix<T: Scalar>(&self) -> Arc<SparseMatrix<T>> {
        let mut triplets = Vec::with_capacity(self.total_nodes());
        for (g, w) in self.offsets.windows(2).enumerate() {
            let inv = T::of(1.0 / (w[1] - w[0]) as f64);
            triplets.extend((w[0]..w[1]).map(|v| (g, v, inv)));
        }
        Arc::new(
            SparseMatrix::from_triplets(self.len(), self.total_nodes(), &triplets)
                .expect("offsets within bounds"),
        )
    }

    /// `N × G` matrix copying each graph's row to all of its nodes.
    pub fn broadcast_matrix<T: Scalar>(&self) -> Arc<SparseMatrix<T>> {
        let mut triplets = Vec::with_capacity(self.total_nodes());
        for (g, w) in self.offsets.windows(2).enumerate() {
            triplets.extend((w[0]..w[1]).map(|v| (v, g, T::one())));
        }
        Arc::new(
            SparseMatrix::from_triplets(self.total_nodes(), self.len(), &triplets)
                .expect("offsets within bounds"),
        )
    }
}

/// Merges graphs block-diagonally. Labels stay on the member graphs.
pub fn batch_graphs(graphs: &[MolecularGraph]) -> Result<GraphBatch> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot batch zero graphs".into()))?;
    let dim = first.feature_dim();
    let mut offsets = Vec::with_capacity(graphs.len() + 1);
    offsets.push(0);
    let mut edges = Vec::new();
    let mut feats = Vec::new();
    for g in graphs {
        if g.feature_dim() != dim {
            return Err(crate::error::shape_err("batch_graphs", &[dim], &[g.feature_dim()]));
        }
        let base = *offsets.last().expect("non-empty");
        edges.extend(g.edges().iter().map(|&(u, v)| (u + base, v + base)));
        feats.extend(g.node_features().iter().cloned());
        offsets.push(base + g.num_nodes());
    }
    let total = *offsets.last().expect("non-empty");
    let merged = MolecularGraph::new(total, edges, feats, None)?;
    Ok(GraphBatch {
        graphs: graphs.to_vec(),
        offsets,
        merged,
    })
}

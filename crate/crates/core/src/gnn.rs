//! Short-range message passing: GCN and GIN.
//!
//! GCN: `h_v' = ReLU(Σ_{u ∈ N(v) ∪ {v}} h_u W / sqrt(d̂_u d̂_v))` with `d̂ = degree + 1`.
//! GIN: `h_v' = MLP(Σ_{u ∈ N(v) ∪ {v}} h_u)` with a two-layer ReLU MLP.
//! Neither carries a bias on the aggregation itself.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::MolecularGraph;
use crate::params::{glorot, Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{SparseMatrix, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gcn,
    Gin,
}

/// Propagation matrices of one (possibly batched) graph.
#[derive(Clone, Debug)]
pub struct GraphOperators<T> {
    pub gcn: Arc<SparseMatrix<T>>,
    pub gin: Arc<SparseMatrix<T>>,
}

impl<T: Scalar> GraphOperators<T> {
    pub fn new(g: &MolecularGraph) -> Self {
        Self {
            gcn: Arc::new(g.gcn_matrix()),
            gin: Arc::new(g.gin_matrix()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub weight: ParamId,
}

impl GcnLayer {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{prefix}.weight"), glorot(rng, d_in, d_out))?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        h: Var,
        ops: &GraphOperators<T>,
    ) -> Result<Var> {
        let hw = tape.matmul(h, params[self.weight])?;
        let agg = tape.spmm(&ops.gcn, hw)?;
        tape.relu(agg)
    }
}

#[derive(Clone, Debug)]
pub struct GinLayer {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GinLayer {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w1: store.add(format!("{prefix}.mlp.w1"), glorot(rng, d_in, d_out))?,
            b1: store.add(format!("{prefix}.mlp.b1"), Tensor::zeros(&[d_out]))?,
            w2: store.add(format!("{prefix}.mlp.w2"), glorot(rng, d_out, d_out))?,
            b2: store.add(format!("{prefix}.mlp.b2"), Tensor::zeros(&[d_out]))?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        h: Var,
        ops: &GraphOperators<T>,
    ) -> Result<Var> {
        let agg = tape.spmm(&ops.gin, h)?;
        let z = tape.matmul(agg, params[self.w1])?;
        let z = tape.add_row(z, params[self.b1])?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, params[self.w2])?;
        tape.add_row(z, params[self.b2])
    }
}

#[derive(Clone, Debug)]
pub enum GnnLayer {
    Gcn(GcnLayer),
    Gin(GinLayer),
}

impl GnnLayer {
    pub fn init<T: Scalar, R: Rng>(
        backbone: Backbone,
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match backbone {
            Backbone::Gcn => Self::Gcn(GcnLayer::init(store, &format!("{prefix}.gcn"), d_in, d_out, rng)?),
            Backbone::Gin => Self::Gin(GinLayer::init(store, &format!("{prefix}.gin"), d_in, d_out, rng)?),
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        h: Var,
        ops: &GraphOperators<T>,
    ) -> Result<Var> {
        match self {
            Self::Gcn(l) => l.forward(tape, params, h, ops),
            Self::Gin(l) => l.forward(tape, params, h, ops),
        }
    }
}

/// One GCN layer on a single graph.
pub fn gcn_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    h: Var,
    g: &MolecularGraph,
    layer: &GcnLayer,
) -> Result<Var> {
    layer.forward(tape, params, h, &GraphOperators::new(g))
}

/// One GIN layer on a single graph.
pub fn gin_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    h: Var,
    g: &MolecularGraph,
    layer: &GinLayer,
) -> Result<Var> {
    layer.forward(tape, params, h, &GraphOperators::new(g))
}

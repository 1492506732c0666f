//! Virtual-node baseline.
//!
//! A virtual node holds one state row per graph. Each layer it absorbs the
//! mean node embedding, passes through a two-layer MLP, and the result is added
//! to every node:
//!
//! ```text
//! v' = MLP(v + mean(H))
//! H' = H + v'
//! ```
//!
//! With `k > 1` virtual nodes, which are fully connected to each other, node
//! `j` also receives the mean of the other virtual-node states and all `k`
//! updates are added to the nodes.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{glorot, Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{SparseMatrix, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct VirtualNodeParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl VirtualNodeParams {
    pub fn init<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w1: store.add(format!("{prefix}.w1"), glorot(rng, dim, dim))?,
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[dim]))?,
            w2: store.add(format!("{prefix}.w2"), glorot(rng, dim, dim))?,
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[dim]))?,
        })
    }

    fn mlp<T: Scalar>(&self, tape: &mut Tape<T>, params: &Binding, x: Var) -> Result<Var> {
        let z = tape.matmul(x, params[self.w1])?;
        let z = tape.add_row(z, params[self.b1])?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, params[self.w2])?;
        tape.add_row(z, params[self.b2])
    }
}

/// Per-layer parameters of `k ≥ 1` virtual nodes.
#[derive(Clone, Debug)]
pub struct VirtualNodes {
    pub nodes: Vec<VirtualNodeParams>,
}

impl VirtualNodes {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        count: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("need at least one virtual node".into()));
        }
        let nodes = (0..count)
            .map(|j| VirtualNodeParams::init(store, &format!("{prefix}.vn{j}"), dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// One virtual-node update over a batch.
///
/// `h` is `N × d`, each entry of `states` is `G × d`; `pool` (`G × N`) averages
/// each graph's rows and `broadcast` (`N × G`) copies a graph row to its nodes.
/// Returns the new node embeddings and the new states.
pub fn virtual_node_update<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    h: Var,
    states: &[Var],
    pool: &Arc<SparseMatrix<T>>,
    broadcast: &Arc<SparseMatrix<T>>,
    p: &VirtualNodes,
) -> Result<(Var, Vec<Var>)> {
    if states.len() != p.len() {
        return Err(Error::InvalidArgument(format!(
            "{} virtual-node states for {} virtual nodes",
            states.len(),
            p.len()
        )));
    }
    let pooled = tape.spmm(pool, h)?;
    let k = p.len();
    let total = if k > 1 { Some(sum_all(tape, states)?) } else { None };
    let mut new_states = Vec::with_capacity(k);
    for (j, (node, &v)) in p.nodes.iter().zip(states).enumerate() {
        let mut input = tape.add(v, pooled)?;
        if let Some(total) = total {
            let others = tape.sub(total, states[j])?;
            let others = tape.scale(others, T::one() / T::of((k - 1) as f64))?;
            input = tape.add(input, others)?;
        }
        new_states.push(node.mlp(tape, params, input)?);
    }
    let update = sum_all(tape, &new_states)?;
    let spread = tape.spmm(broadcast, update)?;
    Ok((tape.add(h, spread)?, new_states))
}

fn sum_all<T: Scalar>(tape: &mut Tape<T>, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(acc)
}

/// Single-graph, single-virtual-node layer: `(H', v')`.
pub fn virtual_node_layer<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    h: Var,
    vstate: Var,
    p: &VirtualNodeParams,
) -> Result<(Var, Var)> {
    let n = tape.value(h).rows();
    if n == 0 {
        return Err(Error::InvalidArgument("virtual node over an empty graph".into()));
    }
    let inv = T::one() / T::of(n as f64);
    let pool = Arc::new(SparseMatrix::from_triplets(1, n, &(0..n).map(|v| (0, v, inv)).collect::<Vec<_>>())?);
    let broadcast = Arc::new(SparseMatrix::from_triplets(n, 1, &(0..n).map(|v| (v, 0, T::one())).collect::<Vec<_>>())?);
    let nodes = VirtualNodes { nodes: vec![p.clone()] };
    let (h, mut states) = virtual_node_update(tape, params, h, &[vstate], &pool, &broadcast, &nodes)?;
    Ok((h, states.remove(0)))
}

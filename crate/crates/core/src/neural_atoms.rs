//! The neural-atom block.
//!
//! Per layer, on the output `H_gnn` of a short-range GNN layer:
//!
//! 1. `H_NA = LN(Q_NA + MHA(Q_NA, H_gnn, H_gnn))` projects the `N` atoms onto
//!    `K` learnable neural atoms; the per-head attention matrices `Â_m` (`K×N`)
//!    are the soft allocation of atoms to neural atoms.
//! 2. `H̃_NA = LN(H_NA + MHA(H_NA, H_NA, H_NA))` lets neural atoms exchange
//!    information.
//! 3. `H = H_gnn + Ã H̃_NA` with `Ã = mean_m(Â_m)ᵀ` projects back.
//!
//! `K` does not depend on the graph, so one parameter set serves graphs of any
//! size, and every pair of atoms is connected through a single hop of step 2.

use rand::Rng;

use crate::attention::{multi_head_attention, MultiHeadParams};
use crate::error::{Error, Result};
use crate::gnn::{GnnLayer, GraphOperators};
use crate::params::{normal, Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const QUERY_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct NeuralAtomLayerParams {
    /// `K × d` neural-atom queries.
    pub query: ParamId,
    pub num_atoms: usize,
    pub dim: usize,
    pub step1: MultiHeadParams,
    pub step2: MultiHeadParams,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

impl NeuralAtomLayerParams {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        num_atoms: usize,
        num_heads: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_atoms == 0 {
            return Err(Error::InvalidArgument("number of neural atoms must be >= 1".into()));
        }
        let query = store.add(format!("{prefix}.query"), normal(rng, &[num_atoms, dim], QUERY_INIT_STD))?;
        let step1 = MultiHeadParams::init(store, &format!("{prefix}.project"), num_heads, dim, rng)?;
        let step2 = MultiHeadParams::init(store, &format!("{prefix}.exchange"), num_heads, dim, rng)?;
        Ok(Self {
            query,
            num_atoms,
            dim,
            step1,
            step2,
            ln1_gamma: store.add(format!("{prefix}.ln1.gamma"), Tensor::ones(&[dim]))?,
            ln1_beta: store.add(format!("{prefix}.ln1.beta"), Tensor::zeros(&[dim]))?,
            ln2_gamma: store.add(format!("{prefix}.ln2.gamma"), Tensor::ones(&[dim]))?,
            ln2_beta: store.add(format!("{prefix}.ln2.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn num_heads(&self) -> usize {
        self.step1.num_heads()
    }
}

/// Tape handles of the intermediates of one block on one graph.
#[derive(Clone, Debug)]
pub struct NeuralAtomVars {
    pub h_na: Var,
    pub h_na_tilde: Var,
    pub a_hat: Vec<Var>,
    pub a_tilde: Var,
}

impl NeuralAtomVars {
    pub fn materialize<T: Scalar>(&self, tape: &Tape<T>) -> NeuralAtomTrace<T> {
        NeuralAtomTrace {
            h_na: tape.value(self.h_na).clone(),
            h_na_tilde: tape.value(self.h_na_tilde).clone(),
            a_hat: self.a_hat.iter().map(|&v| tape.value(v).clone()).collect(),
            a_tilde: tape.value(self.a_tilde).clone(),
        }
    }
}

/// Values of the block intermediates on one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralAtomTrace<T> {
    /// `K × d`
    pub h_na: Tensor<T>,
    /// `K × d`
    pub h_na_tilde: Tensor<T>,
    /// One `K × N` matrix per head.
    pub a_hat: Vec<Tensor<T>>,
    /// `N × K` allocation matrix.
    pub a_tilde: Tensor<T>,
}

fn check_width<T: Scalar>(tape: &Tape<T>, x: Var, p: &NeuralAtomLayerParams, op: &'static str) -> Result<()> {
    let shape = tape.value(x).shape();
    if shape.len() != 2 || shape[1] != p.dim || shape[0] == 0 {
        return Err(crate::error::shape_err(op, shape, &[shape.first().copied().unwrap_or(0), p.dim]));
    }
    Ok(())
}

/// Step 1. Returns `H_NA` (`K × d`) and the per-head `Â_m` (`K × N`).
pub fn project_to_neural_atoms<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    h_gnn: Var,
    p: &NeuralAtomLayerParams,
) -> Result<(Var, Vec<Var>)> {
    check_width(tape, h_gnn, p, "project_to_neural_atoms")?;
    let q = params[p.query];
    let att = multi_head_attention(tape, params, q, h_gnn, h_gnn, &p.step1)?;
    let sum = tape.add(q, att.output)?;
    let h_na = tape.layer_norm(sum, params[p.ln1_gamma], params[p.ln1_beta], T::of(LAYER_NORM_EPS))?;
    Ok((h_na, att.weights))
}

/// Step 2: self-attention among the neural atoms.
pub fn exchange_neural_atoms<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    h_na: Var,
    p: &NeuralAtomLayerParams,
) -> Result<Var> {
    check_width(tape, h_na, p, "exchange_neural_atoms")?;
    let att = multi_head_attention(tape, params, h_na, h_na, h_na, &p.step2)?;
    let sum = tape.add(h_na, att.output)?;
    tape.layer_norm(sum, params[p.ln2_gamma], params[p.ln2_beta], T::of(LAYER_NORM_EPS))
}

/// Step 3. Returns the enhanced node embeddings and `Ã` (`N × K`).
pub fn backproject_and_enhance<T: Scalar>(
    tape: &mut Tape<T>,
    h_gnn: Var,
    h_na_tilde: Var,
    a_hat: &[Var],
) -> Result<(Var, Var)> {
    let a_tilde = allocation_matrix(tape, a_hat)?;
    let (n, _) = tape.value(h_gnn).matrix_dims("backproject_and_enhance")?;
    let (k, _) = tape.value(h_na_tilde).matrix_dims("backproject_and_enhance")?;
    if tape.value(a_tilde).shape() != [n, k] {
        return Err(crate::error::shape_err(
            "backproject_and_enhance",
            tape.value(a_tilde).shape(),
            &[n, k],
        ));
    }
    let back = tape.matmul(a_tilde, h_na_tilde)?;
    Ok((tape.add(h_gnn, back)?, a_tilde))
}

/// `Ã = mean_m(Â_m)ᵀ`.
pub fn allocation_matrix<T: Scalar>(tape: &mut Tape<T>, a_hat: &[Var]) -> Result<Var> {
    let (&first, rest) = a_hat
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("no attention heads".into()))?;
    let mut acc = first;
    for &a in rest {
        acc = tape.add(acc, a)?;
    }
    if !rest.is_empty() {
        acc = tape.scale(acc, T::one() / T::of(a_hat.len() as f64))?;
    }
    tape.transpose(acc)
}

/// Steps 1–3 on the GNN output of a single graph.
pub fn enhance<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    h_gnn: Var,
    p: &NeuralAtomLayerParams,
) -> Result<(Var, NeuralAtomVars)> {
    let (h_na, a_hat) = project_to_neural_atoms(tape, params, h_gnn, p)?;
    let h_na_tilde = exchange_neural_atoms(tape, params, h_na, p)?;
    let (h, a_tilde) = backproject_and_enhance(tape, h_gnn, h_na_tilde, &a_hat)?;
    Ok((
        h,
        NeuralAtomVars {
            h_na,
            h_na_tilde,
            a_hat,
            a_tilde,
        },
    ))
}

/// Steps 1–3 applied independently to each graph of a batch.
///
/// Graph `i` owns rows `offsets[i]..offsets[i + 1]` of `h_gnn`.
pub fn enhance_batch<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    h_gnn: Var,
    offsets: &[usize],
    p: &NeuralAtomLayerParams,
) -> Result<(Var, Vec<NeuralAtomVars>)> {
    if offsets.len() < 2 || offsets.last() != Some(&tape.value(h_gnn).rows()) {
        return Err(Error::InvalidArgument(format!(
            "batch offsets {offsets:?} do not cover {} rows",
            tape.value(h_gnn).rows()
        )));
    }
    if offsets.len() == 2 {
        let (h, vars) = enhance(tape, params, h_gnn, p)?;
        return Ok((h, vec![vars]));
    }
    let mut parts = Vec::with_capacity(offsets.len() - 1);
    let mut traces = Vec::with_capacity(offsets.len() - 1);
    for w in offsets.windows(2) {
        let seg = tape.slice_rows(h_gnn, w[0], w[1])?;
        let (h, vars) = enhance(tape, params, seg, p)?;
        parts.push(h);
        traces.push(vars);
    }
    Ok((tape.concat_rows(&parts)?, traces))
}

/// One full layer: GNN propagation followed by the neural-atom block.
pub fn neural_atom_block<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    h_prev: Var,
    ops: &GraphOperators<T>,
    gnn: &GnnLayer,
    p: &NeuralAtomLayerParams,
) -> Result<(Var, NeuralAtomVars)> {
    let h_gnn = gnn.forward(tape, params, h_prev, ops)?;
    enhance(tape, params, h_gnn, p)
}

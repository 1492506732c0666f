//! Central-difference gradient oracle.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compares tape gradients with central differences.
///
/// `build` receives a fresh tape whose first `params.len()` nodes are the
/// parameters (as trainable leaves, in order) and must return a scalar loss.
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<T, F>(params: &[Tensor<T>], build: F, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .map(|&v| tape.grad(v).cloned().expect("leaf gradient"))
            .collect::<Vec<_>>()
    };
    let numeric = central_difference(params, |ps| evaluate(ps, &build), eps)?;

    let mut worst = T::zero();
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let err = (x - y).abs() / x.abs().max(T::one());
            if !(err <= worst) {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// Numerical gradient of `f` with respect to every entry of every parameter.
pub fn central_difference<T, F>(params: &[Tensor<T>], f: F, eps: T) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<T>,
{
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    let two_eps = eps + eps;
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].shape());
        for i in 0..params[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work[p].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / two_eps;
        }
        out.push(grad);
    }
    Ok(out)
}

fn evaluate<T, F>(params: &[Tensor<T>], build: &F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::Contract("grad_check objective must be scalar".into()));
    }
    Ok(v.data()[0])
}

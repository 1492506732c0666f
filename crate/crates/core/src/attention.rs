//! Multi-head attention.
//!
//! `MultiHead(Q, K, V) = [O_1 ‖ … ‖ O_M] W^O` with
//! `O_m = softmax((Q W_m^Q)(K W_m^K)ᵀ / sqrt(d)) (V W_m^V)`.
//! All per-head widths equal the model width `d`; the per-head attention
//! matrices are returned alongside the output because the neural-atom block
//! reuses them as allocation matrices.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{glorot, Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

#[derive(Clone, Debug)]
pub struct MultiHeadParams {
    pub heads: Vec<HeadParams>,
    /// `(M·d) × d` output projection.
    pub output: ParamId,
    pub dim: usize,
}

impl MultiHeadParams {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        num_heads: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_heads == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "attention needs at least one head and dim >= 1 (got {num_heads}, {dim})"
            )));
        }
        let mut heads = Vec::with_capacity(num_heads);
        for m in 0..num_heads {
            heads.push(HeadParams {
                query: store.add(format!("{prefix}.head{m}.wq"), glorot(rng, dim, dim))?,
                key: store.add(format!("{prefix}.head{m}.wk"), glorot(rng, dim, dim))?,
                value: store.add(format!("{prefix}.head{m}.wv"), glorot(rng, dim, dim))?,
            });
        }
        let output = store.add(format!("{prefix}.wo"), glorot(rng, num_heads * dim, dim))?;
        Ok(Self { heads, output, dim })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }
}

/// Result of [`multi_head_attention`].
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `k × d` attended output.
    pub output: Var,
    /// One `k × N` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Binding,
    query: Var,
    key: Var,
    value: Var,
    p: &MultiHeadParams,
) -> Result<AttentionOutput> {
    if tape.value(key).rows() != tape.value(value).rows() {
        return Err(crate::error::shape_err(
            "multi_head_attention",
            tape.value(key).shape(),
            tape.value(value).shape(),
        ));
    }
    let scale = T::one() / T::of(p.dim as f64).sqrt();
    let mut outputs = Vec::with_capacity(p.heads.len());
    let mut weights = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let q = tape.matmul(query, params[head.query])?;
        let k = tape.matmul(key, params[head.key])?;
        let v = tape.matmul(value, params[head.value])?;
        let logits = tape.matmul_nt(q, k)?;
        let logits = tape.scale(logits, scale)?;
        let attn = tape.softmax_rows(logits)?;
        outputs.push(tape.matmul(attn, v)?);
        weights.push(attn);
    }
    let joined = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat_cols(&outputs)?
    };
    let output = tape.matmul(joined, params[p.output])?;
    Ok(AttentionOutput { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::grad_check_params;
    use crate::tensor::Tensor;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn identity_params(d: usize) -> (ParamStore<f64>, MultiHeadParams) {
        let mut store = ParamStore::new();
        let head = HeadParams {
            query: store.add("wq", Tensor::eye(d)).unwrap(),
            key: store.add("wk", Tensor::eye(d)).unwrap(),
            value: store.add("wv", Tensor::eye(d)).unwrap(),
        };
        let output = store.add("wo", Tensor::eye(d)).unwrap();
        (store, MultiHeadParams { heads: vec![head], output, dim: d })
    }

    struct Run {
        output: Tensor<f64>,
        weights: Vec<Tensor<f64>>,
    }

    fn run(store: &ParamStore<f64>, p: &MultiHeadParams, q: &Tensor<f64>, kv: &Tensor<f64>) -> Run {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let q = tape.constant(q.clone());
        let kv = tape.constant(kv.clone());
        let out = multi_head_attention(&mut tape, &bind, q, kv, kv, p).unwrap();
        Run {
            output: tape.value(out.output).clone(),
            weights: out.weights.iter().map(|&w| tape.value(w).clone()).collect(),
        }
    }

    #[test]
    fn singleton_key_gives_unit_weight() {
        let (store, p) = identity_params(3);
        let x = Tensor::from_rows(&[[0.2, -0.4, 1.0]]).unwrap();
        let r = run(&store, &p, &x, &x);
        assert_eq!(r.weights[0].data(), &[1.0]);
        assert!(r.output.max_abs_diff(&x).unwrap() < 1e-15);
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let (store, p) = identity_params(2);
        let q = Tensor::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]).unwrap();
        let kv = Tensor::from_rows(&[[0.3, 0.7]; 4]).unwrap();
        let r = run(&store, &p, &q, &kv);
        for &w in r.weights[0].data() {
            assert!((w - 0.25).abs() < 1e-15);
        }
        for row in 0..2 {
            assert!((r.output.get(row, 0) - 0.3).abs() < 1e-15);
            assert!((r.output.get(row, 1) - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_naive_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (k, n, d, heads) = (3, 5, 4, 2);
        let mut store = ParamStore::new();
        let p = MultiHeadParams::init(&mut store, "att", heads, d, &mut rng).unwrap();
        let q = random(&mut rng, k, d);
        let kv = random(&mut rng, n, d);
        let r = run(&store, &p, &q, &kv);

        let mm = |a: &Tensor<f64>, b: &Tensor<f64>| -> Vec<Vec<f64>> {
            (0..a.rows())
                .map(|i| {
                    (0..b.cols())
                        .map(|j| (0..a.cols()).map(|t| a.get(i, t) * b.get(t, j)).sum())
                        .collect()
                })
                .collect()
        };
        let mut concat = vec![Vec::new(); k];
        for (m, head) in p.heads.iter().enumerate() {
            let qp = mm(&q, store.get(head.query));
            let kp = mm(&kv, store.get(head.key));
            let vp = mm(&kv, store.get(head.value));
            for i in 0..k {
                let logits: Vec<f64> = (0..n)
                    .map(|j| (0..d).map(|t| qp[i][t] * kp[j][t]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp() / z).collect();
                for j in 0..n {
                    assert!((r.weights[m].get(i, j) - w[j]).abs() < 1e-10);
                }
                for t in 0..d {
                    concat[i].push((0..n).map(|j| w[j] * vp[j][t]).sum::<f64>());
                }
            }
        }
        let concat = Tensor::from_rows(&concat).unwrap();
        let expect = mm(&concat, store.get(p.output));
        for i in 0..k {
            for t in 0..d {
                assert!((r.output.get(i, t) - expect[i][t]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn key_permutation_permutes_weight_columns_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let n = rng.gen_range(1..12);
            let mut store = ParamStore::new();
            let p = MultiHeadParams::init(&mut store, "att", 3, 4, &mut rng).unwrap();
            let q = random(&mut rng, 2, 4);
            let kv = random(&mut rng, n, 4);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let base = run(&store, &p, &q, &kv);
            let permuted = run(&store, &p, &q, &kv.permute_rows(&perm).unwrap());
            assert!(base.output.max_abs_diff(&permuted.output).unwrap() < 1e-10);
            for (a, b) in base.weights.iter().zip(&permuted.weights) {
                for i in 0..2 {
                    for j in 0..n {
                        assert!((a.get(i, j) - b.get(i, perm[j])).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn weights_are_row_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut store = ParamStore::new();
        let p = MultiHeadParams::init(&mut store, "att", 4, 6, &mut rng).unwrap();
        let q = random(&mut rng, 3, 6).map(|x| 20.0 * x);
        let kv = random(&mut rng, 9, 6).map(|x| 20.0 * x);
        for w in run(&store, &p, &q, &kv).weights {
            for i in 0..3 {
                let s: f64 = w.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-10);
                assert!(w.row(i).iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn gradients_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut store = ParamStore::new();
        let p = MultiHeadParams::init(&mut store, "att", 2, 3, &mut rng).unwrap();
        let q = random(&mut rng, 2, 3);
        let kv = random(&mut rng, 4, 3);
        let err = grad_check_params(
            &store,
            &[q, kv],
            |tape, bind, x| {
                let out = multi_head_attention(tape, bind, x[0], x[1], x[1], &p)?;
                let sq = tape.mul(out.output, out.output)?;
                tape.sum(sq)
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn mismatched_key_value_rows_rejected() {
        let (store, p) = identity_params(2);
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let q = tape.constant(Tensor::zeros(&[1, 2]));
        let k = tape.constant(Tensor::zeros(&[3, 2]));
        let v = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(multi_head_attention(&mut tape, &bind, q, k, v, &p).is_err());
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Augment, Task, TrainConfig};
use crate::baselines::{virtual_node_update, VirtualNodes};
use crate::error::{Error, Result};
use crate::gnn::{GnnLayer, GraphOperators};
use crate::graph::{GraphBatch, Label, MolecularGraph};
use crate::neural_atoms::{enhance_batch, NeuralAtomLayerParams, NeuralAtomVars};
use crate::params::{glorot, Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::schedule::{compute_k_schedule, KSchedule};
use crate::tensor::{Tape, Tensor, Var};

/// Dataset-derived sizes needed to rebuild a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub feature_dim: usize,
    pub output_dim: usize,
    pub avg_nodes: f64,
    pub k_schedule: Option<KSchedule>,
}

impl ModelSpec {
    /// Derives sizes from a training set and checks its labels fit `cfg.task`.
    pub fn from_dataset(cfg: &TrainConfig, graphs: &[MolecularGraph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
        let feature_dim = first.feature_dim();
        check_labels(cfg.task, graphs)?;
        let output_dim = match cfg.task {
            Task::GraphClassification => graphs
                .iter()
                .filter_map(|g| match g.label() {
                    Some(Label::Class(c)) => Some(c + 1),
                    _ => None,
                })
                .max()
                .unwrap_or(2)
                .max(2),
            Task::GraphRegression => match first.label() {
                Some(Label::Vector(v)) => v.len(),
                _ => unreachable!("checked above"),
            },
            Task::PairContact => 1,
        };
        let avg_nodes = graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / graphs.len() as f64;
        let k_schedule = match cfg.augment {
            Augment::NeuralAtoms => Some(compute_k_schedule(cfg.k_strategy, cfg.proportion, avg_nodes, cfg.layers)?),
            _ => None,
        };
        Ok(Self {
            feature_dim,
            output_dim,
            avg_nodes,
            k_schedule,
        })
    }
}

/// Errors unless every graph carries the label kind `task` needs, with
/// consistent regression width.
pub fn check_labels(task: Task, graphs: &[MolecularGraph]) -> Result<()> {
    let mut width = None;
    for (i, g) in graphs.iter().enumerate() {
        let ok = match (task, g.label()) {
            (Task::GraphClassification, Some(Label::Class(_))) => true,
            (Task::GraphRegression, Some(Label::Vector(v))) => {
                let w = *width.get_or_insert(v.len());
                w == v.len() && w > 0
            }
            (Task::PairContact, Some(Label::Pairs(_))) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Incompatible(format!(
                "graph {i} has label {:?}, which does not fit task {task:?}",
                g.label()
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub gnn: GnnLayer,
    pub neural_atoms: Option<NeuralAtomLayerParams>,
    pub virtual_nodes: Option<VirtualNodes>,
}

#[derive(Clone, Debug)]
pub enum Head {
    /// Mean pool then affine.
    Graph { w: ParamId, b: ParamId },
    /// `[h_u ‖ h_v]` through a two-layer MLP to one logit.
    Pair {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: TrainConfig,
    pub spec: ModelSpec,
    pub store: ParamStore<T>,
    pub layers: Vec<Layer>,
    pub head: Head,
}

/// Tape handles produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// Final node embeddings, `N × hidden`.
    pub nodes: Var,
    /// `G × output_dim` for graph tasks, `P × 1` pair logits for pair contact.
    pub output: Var,
    /// `traces[layer][graph]` for neural-atom models.
    pub traces: Vec<Vec<NeuralAtomVars>>,
    /// `(graph, u, v)` of each output row for pair contact.
    pub pairs: Vec<(usize, usize, usize)>,
}

impl<T: Scalar> Model<T> {
    /// Initializes all parameters from `cfg.seed`.
    pub fn build(cfg: &TrainConfig, spec: &ModelSpec) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let d = cfg.hidden;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { spec.feature_dim } else { d };
            let prefix = format!("layer{l}");
            let gnn = GnnLayer::init(cfg.backbone, &mut store, &prefix, d_in, d, &mut rng)?;
            let neural_atoms = match cfg.augment {
                Augment::NeuralAtoms => {
                    let sched = spec
                        .k_schedule
                        .as_ref()
                        .ok_or_else(|| Error::Incompatible("neural atoms need a K schedule".into()))?;
                    let k = *sched
                        .counts
                        .get(l)
                        .ok_or_else(|| Error::Incompatible("K schedule shorter than the layer stack".into()))?;
                    Some(NeuralAtomLayerParams::init(&mut store, &format!("{prefix}.na"), k, cfg.heads, d, &mut rng)?)
                }
                _ => None,
            };
            let virtual_nodes = match cfg.augment {
                Augment::VirtualNode => Some(VirtualNodes::init(&mut store, &prefix, cfg.virtual_nodes, d, &mut rng)?),
                _ => None,
            };
            layers.push(Layer {
                gnn,
                neural_atoms,
                virtual_nodes,
            });
        }
        let head = match cfg.task {
            Task::PairContact => Head::Pair {
                w1: store.add("head.w1", glorot(&mut rng, 2 * d, d))?,
                b1: store.add("head.b1", Tensor::zeros(&[d]))?,
                w2: store.add("head.w2", glorot(&mut rng, d, 1))?,
                b2: store.add("head.b2", Tensor::zeros(&[1]))?,
            },
            _ => Head::Graph {
                w: store.add("head.w", glorot(&mut rng, d, spec.output_dim))?,
                b: store.add("head.b", Tensor::zeros(&[spec.output_dim]))?,
            },
        };
        Ok(Self {
            config: cfg.clone(),
            spec: spec.clone(),
            store,
            layers,
            head,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn forward(&self, tape: &mut Tape<T>, params: &Binding, batch: &GraphBatch) -> Result<Forward> {
        let merged = batch.merged();
        if merged.feature_dim() != self.spec.feature_dim {
            return Err(Error::Incompatible(format!(
                "model expects {} node features, data has {}",
                self.spec.feature_dim,
                merged.feature_dim()
            )));
        }
        let ops = GraphOperators::new(merged);
        let pool = batch.mean_pool_matrix();
        let needs_broadcast = self.layers.iter().any(|l| l.virtual_nodes.is_some());
        let broadcast = if needs_broadcast { Some(batch.broadcast_matrix()) } else { None };

        let mut h = tape.constant(merged.features_tensor());
        let mut states: Option<Vec<Var>> = None;
        let mut traces = Vec::new();
        for layer in &self.layers {
            h = layer.gnn.forward(tape, params, h, &ops)?;
            if let Some(na) = &layer.neural_atoms {
                let (out, tr) = enhance_batch(tape, params, h, batch.offsets(), na)?;
                h = out;
                traces.push(tr);
            }
            if let (Some(vn), Some(bc)) = (&layer.virtual_nodes, &broadcast) {
                let prev = match states.take() {
                    Some(s) => s,
                    None => (0..vn.len())
                        .map(|_| tape.constant(Tensor::zeros(&[batch.len(), self.config.hidden])))
                        .collect(),
                };
                let (out, next) = virtual_node_update(tape, params, h, &prev, &pool, bc, vn)?;
                h = out;
                states = Some(next);
            }
        }

        let mut pairs = Vec::new();
        let output = match &self.head {
            Head::Graph { w, b } => {
                let pooled = tape.spmm(&pool, h)?;
                let z = tape.matmul(pooled, params[*w])?;
                tape.add_row(z, params[*b])?
            }
            Head::Pair { w1, b1, w2, b2 } => {
                let mut us = Vec::new();
                let mut vs = Vec::new();
                for (gi, g) in batch.graphs().iter().enumerate() {
                    if let Some(Label::Pairs(ps)) = g.label() {
                        let off = batch.offsets()[gi];
                        for p in ps {
                            us.push(off + p.u);
                            vs.push(off + p.v);
                            pairs.push((gi, p.u, p.v));
                        }
                    }
                }
                if pairs.is_empty() {
                    return Err(Error::Incompatible("pair-contact batch has no labelled pairs".into()));
                }
                let hu = tape.gather_rows(h, &us)?;
                let hv = tape.gather_rows(h, &vs)?;
                let x = tape.concat_cols(&[hu, hv])?;
                let z = tape.matmul(x, params[*w1])?;
                let z = tape.add_row(z, params[*b1])?;
                let z = tape.relu(z)?;
                let z = tape.matmul(z, params[*w2])?;
                tape.add_row(z, params[*b2])?
            }
        };
        Ok(Forward {
            nodes: h,
            output,
            traces,
            pairs,
        })
    }

    /// Task loss of a forward pass.
    pub fn loss(&self, tape: &mut Tape<T>, fwd: &Forward, batch: &GraphBatch) -> Result<Var> {
        match self.config.task {
            Task::GraphClassification => {
                let targets = class_targets(batch.graphs())?;
                if let Some(&c) = targets.iter().find(|&&c| c >= self.spec.output_dim) {
                    return Err(Error::Incompatible(format!(
                        "class {c} outside the model's {} classes",
                        self.spec.output_dim
                    )));
                }
                tape.softmax_cross_entropy(fwd.output, &targets)
            }
            Task::GraphRegression => {
                let targets = regression_targets::<T>(batch.graphs(), self.spec.output_dim)?;
                tape.mse(fwd.output, &targets)
            }
            Task::PairContact => {
                let targets = pair_targets::<T>(batch.graphs());
                tape.bce_with_logits(fwd.output, &targets)
            }
        }
    }
}

pub fn class_targets(graphs: &[MolecularGraph]) -> Result<Vec<usize>> {
    graphs
        .iter()
        .map(|g| match g.label() {
            Some(Label::Class(c)) => Ok(*c),
            other => Err(Error::Incompatible(format!("expected a class label, found {other:?}"))),
        })
        .collect()
}

pub fn regression_targets<T: Scalar>(graphs: &[MolecularGraph], width: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(graphs.len() * width);
    for g in graphs {
        match g.label() {
            Some(Label::Vector(v)) if v.len() == width => out.extend(v.iter().map(|&x| T::of(x))),
            other => {
                return Err(Error::Incompatible(format!(
                    "expected a {width}-vector label, found {other:?}"
                )))
            }
        }
    }
    Ok(out)
}

/// Contact flags in the row order of [`Forward::pairs`].
pub fn pair_targets<T: Scalar>(graphs: &[MolecularGraph]) -> Vec<T> {
    graphs
        .iter()
        .filter_map(|g| match g.label() {
            Some(Label::Pairs(ps)) => Some(ps.iter().map(|p| if p.contact { T::one() } else { T::zero() })),
            _ => None,
        })
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch_graphs, generate_lri_task};

    fn cfg(augment: Augment) -> TrainConfig {
        TrainConfig {
            augment,
            layers: 2,
            hidden: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn parameter_counts_are_structural() {
        let small = generate_lri_task(8, 6, 2, 0).unwrap();
        let large = generate_lri_task(8, 30, 2, 0).unwrap();
        let plain = cfg(Augment::None);
        let spec = ModelSpec::from_dataset(&plain, &small).unwrap();
        let m = Model::<f64>::build(&plain, &spec).unwrap();
        // GCN weights 3×8 and 8×8, head 8×2 + 2.
        assert_eq!(m.num_parameters(), 3 * 8 + 8 * 8 + 8 * 2 + 2);

        let na = TrainConfig {
            proportion: 0.2,
            ..cfg(Augment::NeuralAtoms)
        };
        let mut spec_large = ModelSpec::from_dataset(&na, &large).unwrap();
        let spec_small = ModelSpec::from_dataset(&na, &small).unwrap();
        assert_ne!(spec_large.k_schedule, spec_small.k_schedule);
        // With the same K the parameter count does not see N.
        spec_large.k_schedule = spec_small.k_schedule.clone();
        let a = Model::<f64>::build(&na, &spec_small).unwrap();
        let b = Model::<f64>::build(&na, &spec_large).unwrap();
        assert_eq!(a.num_parameters(), b.num_parameters());
    }

    #[test]
    fn same_seed_same_initial_parameters() {
        let data = generate_lri_task(4, 5, 2, 0).unwrap();
        for augment in [Augment::None, Augment::NeuralAtoms, Augment::VirtualNode] {
            let c = cfg(augment);
            let spec = ModelSpec::from_dataset(&c, &data).unwrap();
            let a = Model::<f64>::build(&c, &spec).unwrap();
            let b = Model::<f64>::build(&c, &spec).unwrap();
            assert_eq!(a.store, b.store);
            let other = Model::<f64>::build(&TrainConfig { seed: 1, ..c.clone() }, &spec).unwrap();
            assert_ne!(a.store, other.store);
        }
    }

    #[test]
    fn forward_shapes() {
        let data = generate_lri_task(5, 7, 3, 0).unwrap();
        let batch = batch_graphs(&data).unwrap();
        for augment in [Augment::None, Augment::NeuralAtoms, Augment::VirtualNode] {
            let c = cfg(augment);
            let spec = ModelSpec::from_dataset(&c, &data).unwrap();
            let m = Model::<f64>::build(&c, &spec).unwrap();
            let mut tape = Tape::new();
            let bind = m.store.bind(&mut tape);
            let fwd = m.forward(&mut tape, &bind, &batch).unwrap();
            assert_eq!(tape.value(fwd.output).shape(), &[5, 2]);
            assert_eq!(tape.value(fwd.nodes).shape(), &[35, 8]);
            let expect_traces = if augment == Augment::NeuralAtoms { 2 } else { 0 };
            assert_eq!(fwd.traces.len(), expect_traces);
            let loss = m.loss(&mut tape, &fwd, &batch).unwrap();
            tape.backward(loss).unwrap();
        }
    }

    #[test]
    fn task_label_mismatch_is_rejected() {
        let data = generate_lri_task(4, 5, 2, 0).unwrap();
        let c = TrainConfig {
            task: Task::GraphRegression,
            ..cfg(Augment::None)
        };
        assert!(matches!(ModelSpec::from_dataset(&c, &data), Err(Error::Incompatible(_))));
    }
}

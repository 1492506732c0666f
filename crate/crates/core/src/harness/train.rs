use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::checkpoint::Checkpoint;
use super::config::{Task, TrainConfig};
use super::metrics::{self, write_metrics, MetricRow};
use super::model::{check_labels, class_targets, pair_targets, regression_targets, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::graph::{batch_graphs, load_dataset, MolecularGraph};
use crate::tensor::{Tape, Tensor};

/// Model and per-epoch metrics after training.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model<f64>,
    pub history: Vec<MetricRow>,
}

pub fn task_metric_name(task: Task) -> &'static str {
    match task {
        Task::GraphClassification => "accuracy",
        Task::GraphRegression => "mae",
        Task::PairContact => "mrr",
    }
}

/// Trains on `train`, evaluating on `test` after every epoch when given.
pub fn fit(cfg: &TrainConfig, train: &[MolecularGraph], test: Option<&[MolecularGraph]>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = ModelSpec::from_dataset(cfg, train)?;
    if let Some(test) = test {
        check_labels(cfg.task, test)?;
    }
    let mut model = Model::<f64>::build(cfg, &spec)?;
    let mut adam = super::optim::Adam::new(&model.store, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let graphs: Vec<MolecularGraph> = chunk.iter().map(|&i| train[i].clone()).collect();
            let batch = batch_graphs(&graphs)?;
            let mut tape = Tape::new();
            let bind = model.store.bind(&mut tape);
            let fwd = model.forward(&mut tape, &bind, &batch)?;
            let loss = model.loss(&mut tape, &fwd, &batch)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, value });
            }
            total += value * chunk.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<&Tensor<f64>> = bind
                .vars()
                .iter()
                .map(|&v| tape.grad(v).expect("parameters are trainable leaves"))
                .collect();
            adam.step(&mut model.store, &grads)?;
        }
        history.push(MetricRow {
            epoch,
            split: "train".into(),
            metric: "loss".into(),
            value: total / train.len() as f64,
        });
        if let Some(test) = test {
            for (metric, value) in evaluate(&model, test)? {
                history.push(MetricRow {
                    epoch,
                    split: "test".into(),
                    metric,
                    value,
                });
            }
        }
    }
    Ok(TrainOutcome { model, history })
}

/// Mean loss and the task metric (`accuracy`, `mae` or `mrr`) over `graphs`.
pub fn evaluate(model: &Model<f64>, graphs: &[MolecularGraph]) -> Result<Vec<(String, f64)>> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    check_labels(model.config.task, graphs)?;
    let mut loss_sum = 0.0;
    let mut logits = Vec::new();
    let mut predictions = Vec::new();
    let mut scored = Vec::new();
    for (c, chunk) in graphs.chunks(model.config.batch).enumerate() {
        let batch = batch_graphs(chunk)?;
        let mut tape = Tape::new();
        let bind = model.store.bind(&mut tape);
        let fwd = model.forward(&mut tape, &bind, &batch)?;
        let loss = model.loss(&mut tape, &fwd, &batch)?;
        loss_sum += tape.value(loss).data()[0] * chunk.len() as f64;
        let out = tape.value(fwd.output);
        match model.config.task {
            Task::GraphClassification => logits.extend((0..out.rows()).map(|i| out.row(i).to_vec())),
            Task::GraphRegression => predictions.extend_from_slice(out.data()),
            Task::PairContact => {
                let truth = pair_targets::<f64>(chunk);
                let base = c * model.config.batch;
                for (row, &(g, _, _)) in fwd.pairs.iter().enumerate() {
                    scored.push((base + g, out.data()[row], truth[row] > 0.5));
                }
            }
        }
    }
    let metric = match model.config.task {
        Task::GraphClassification => {
            let logits = Tensor::from_rows(&logits)?;
            metrics::accuracy(&logits, &class_targets(graphs)?)?
        }
        Task::GraphRegression => metrics::mae(&predictions, &regression_targets::<f64>(graphs, model.spec.output_dim)?)?,
        Task::PairContact => {
            let ranks = metrics::pair_ranks(&scored);
            if ranks.is_empty() {
                return Err(Error::Incompatible("no positive pairs to rank".into()));
            }
            metrics::mrr(&ranks)?
        }
    };
    Ok(vec![
        ("loss".into(), loss_sum / graphs.len() as f64),
        (task_metric_name(model.config.task).into(), metric),
    ])
}

/// Files written by [`train`].
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
}

pub fn write_metrics_file(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(crate::error::file_err(path))?);
    write_metrics(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

/// Loads the configured datasets, trains, and writes `metrics.csv`,
/// `checkpoint.json` and `manifest.json` into the output directory.
pub fn train(cfg: &TrainConfig) -> Result<(TrainOutcome, RunFiles)> {
    cfg.validate()?;
    let dataset = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no dataset given".into()))?;
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no output directory given".into()))?;
    let train_set = load_dataset(dataset)?;
    let test_set = cfg.test_dataset.as_ref().map(load_dataset).transpose()?;
    let outcome = fit(cfg, &train_set, test_set.as_deref())?;

    std::fs::create_dir_all(out).map_err(crate::error::file_err(out))?;
    let files = RunFiles {
        metrics: out.join("metrics.csv"),
        checkpoint: out.join("checkpoint.json"),
        manifest: out.join("manifest.json"),
    };
    write_metrics_file(&files.metrics, &outcome.history)?;
    Checkpoint::from_model(&outcome.model, cfg.epochs, outcome.history.clone()).save(&files.checkpoint)?;
    let manifest = json!({
        "config": cfg,
        "feature_dim": outcome.model.spec.feature_dim,
        "output_dim": outcome.model.spec.output_dim,
        "avg_nodes": outcome.model.spec.avg_nodes,
        "k_schedule": outcome.model.spec.k_schedule,
        "parameters": outcome.model.num_parameters(),
        "train_graphs": train_set.len(),
        "test_graphs": test_set.as_ref().map(Vec::len),
    });
    std::fs::write(&files.manifest, serde_json::to_string_pretty(&manifest)?)
        .map_err(crate::error::file_err(&files.manifest))?;
    Ok((outcome, files))
}

/// Writes `Ã` of every neural-atom layer for graph `index` of `graphs`, one
/// CSV per layer, and returns the paths.
pub fn export_alloc(model: &Model<f64>, graphs: &[MolecularGraph], index: usize, out: &Path) -> Result<Vec<PathBuf>> {
    if model.layers.iter().all(|l| l.neural_atoms.is_none()) {
        return Err(Error::Incompatible("model has no neural-atom layers".into()));
    }
    let g = graphs
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("graph {index} out of range ({} graphs)", graphs.len())))?;
    let batch = batch_graphs(std::slice::from_ref(g))?;
    let mut tape = Tape::new();
    let bind = model.store.bind(&mut tape);
    let fwd = model.forward(&mut tape, &bind, &batch)?;
    std::fs::create_dir_all(out).map_err(crate::error::file_err(out))?;
    let mut paths = Vec::new();
    for (layer, traces) in fwd.traces.iter().enumerate() {
        let a = tape.value(traces[0].a_tilde);
        let path = out.join(format!("alloc_graph{index}_layer{layer}.csv"));
        let mut w = BufWriter::new(File::create(&path).map_err(crate::error::file_err(&path))?);
        write!(w, "atom")?;
        for k in 0..a.cols() {
            write!(w, ",na{k}")?;
        }
        writeln!(w)?;
        for i in 0..a.rows() {
            write!(w, "{i}")?;
            for v in a.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

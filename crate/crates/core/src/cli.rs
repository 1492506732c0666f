//! Command-line interface.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::ewald::{ewald_energy, ewald_sum_matrix, interaction_heatmap, load_system};
use crate::gnn::Backbone;
use crate::graph::{generate_lri_task, load_dataset, save_dataset};
use crate::harness::{evaluate, export_alloc, train, Augment, Checkpoint, Task, TrainConfig};
use crate::schedule::KStrategy;

#[derive(Debug, Parser)]
#[command(name = "neural-atoms", version, about = "Train and inspect neural-atom graph models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv, checkpoint.json and manifest.json.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Generate the synthetic long-range path task.
    Generate(GenerateArgs),
    /// Compute an Ewald sum matrix and write it as a heatmap CSV.
    Ewald(EwaldArgs),
    /// Export neural-atom allocation matrices for one graph.
    ExportAlloc(ExportArgs),
}

fn kebab<E: DeserializeOwned>(s: &str) -> std::result::Result<E, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unrecognized value {s:?}"))
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training set (JSON lines).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Held-out set evaluated after every epoch.
    #[arg(long)]
    test_dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// gcn | gin
    #[arg(long, value_parser = kebab::<Backbone>)]
    backbone: Option<Backbone>,
    /// none | neural-atoms | virtual-node
    #[arg(long, value_parser = kebab::<Augment>)]
    augment: Option<Augment>,
    /// graph-classification | graph-regression | pair-contact
    #[arg(long, value_parser = kebab::<Task>)]
    task: Option<Task>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Attention heads per neural-atom step.
    #[arg(long)]
    heads: Option<usize>,
    /// fixed | decremental | incremental
    #[arg(long, value_parser = kebab::<KStrategy>)]
    k_strategy: Option<KStrategy>,
    /// Neural atoms as a fraction of the average node count.
    #[arg(long)]
    proportion: Option<f64>,
    #[arg(long)]
    virtual_nodes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

impl TrainArgs {
    fn into_config(self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { cfg.$field = v; }
            )*};
        }
        set!(seed, backbone, augment, task, layers, hidden, heads, k_strategy, proportion, virtual_nodes, epochs, lr, batch);
        if self.dataset.is_some() {
            cfg.dataset = self.dataset;
        }
        if self.test_dataset.is_some() {
            cfg.test_dataset = self.test_dataset;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the checkpoint's test set, then its training set.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Output file (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    num_graphs: usize,
    #[arg(long, default_value_t = 20)]
    path_len: usize,
    #[arg(long, default_value_t = 2)]
    colors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EwaldArgs {
    /// System JSON with Z, positions, cell_edge, a, real_cutoff, recip_cutoff.
    #[arg(long)]
    system: PathBuf,
    /// Heatmap CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Entries with |x| below this are written as 0.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Index of the graph in the dataset.
    #[arg(long, default_value_t = 0)]
    graph: usize,
    /// Defaults to the checkpoint's training set.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn dataset_for(ck: &Checkpoint, given: Option<PathBuf>, prefer_test: bool) -> Result<PathBuf> {
    let fallback = if prefer_test {
        ck.config.test_dataset.clone().or_else(|| ck.config.dataset.clone())
    } else {
        ck.config.dataset.clone()
    };
    given
        .or(fallback)
        .ok_or_else(|| Error::InvalidArgument("no dataset given and none recorded in the checkpoint".into()))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            let cfg = args.into_config()?;
            let (outcome, files) = train(&cfg)?;
            if let Some(last) = outcome.history.last() {
                println!("epoch {} {} {} = {}", last.epoch, last.split, last.metric, last.value);
            }
            println!("wrote {}", files.checkpoint.display());
        }
        Command::Evaluate(args) => {
            let ck = Checkpoint::load(&args.checkpoint)?;
            let path = dataset_for(&ck, args.dataset, true)?;
            let model = ck.to_model()?;
            let graphs = load_dataset(&path)?;
            println!("metric,value");
            for (name, value) in evaluate(&model, &graphs)? {
                println!("{name},{value}");
            }
        }
        Command::Generate(args) => {
            let graphs = generate_lri_task(args.num_graphs, args.path_len, args.colors, args.seed)?;
            save_dataset(&args.out, &graphs)?;
        }
        Command::Ewald(args) => {
            let sys = load_system(&args.system)?;
            let m = ewald_sum_matrix(&sys)?;
            interaction_heatmap(&m, args.threshold, &args.out)?;
            println!("energy,{}", ewald_energy(&sys)?);
        }
        Command::ExportAlloc(args) => {
            let ck = Checkpoint::load(&args.checkpoint)?;
            let path = dataset_for(&ck, args.dataset, false)?;
            let model = ck.to_model()?;
            let graphs = load_dataset(&path)?;
            for p in export_alloc(&model, &graphs, args.graph, &args.out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code: 0 on success, 2 on usage errors, 1 on failures.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "neural-atoms",
            "train",
            "--augment",
            "virtual-node",
            "--k-strategy",
            "incremental",
            "--hidden",
            "7",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let cfg = args.into_config().unwrap();
        assert_eq!(cfg.augment, Augment::VirtualNode);
        assert_eq!(cfg.k_strategy, KStrategy::Incremental);
        assert_eq!(cfg.hidden, 7);
        assert_eq!(cfg.layers, TrainConfig::default().layers);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["neural-atoms", "frobnicate"]), 2);
        assert_eq!(run(["neural-atoms", "train", "--bogus"]), 2);
        assert_eq!(run(["neural-atoms", "train", "--augment", "sparse"]), 2);
        assert_eq!(run(["neural-atoms", "evaluate"]), 2);
    }

    #[test]
    fn runtime_errors_exit_1() {
        assert_eq!(run(["neural-atoms", "train"]), 1);
        assert_eq!(run(["neural-atoms", "ewald", "--system", "/nonexistent.json", "--out", "/tmp/x.csv"]), 1);
    }
}

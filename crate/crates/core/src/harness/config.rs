use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::Backbone;
use crate::schedule::KStrategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Augment {
    None,
    NeuralAtoms,
    VirtualNode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    GraphClassification,
    GraphRegression,
    PairContact,
}

/// Run configuration. JSON keys match the CLI flag names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub backbone: Backbone,
    pub augment: Augment,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub k_strategy: KStrategy,
    pub proportion: f64,
    pub virtual_nodes: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub task: Task,
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Gcn,
            augment: Augment::NeuralAtoms,
            layers: 3,
            hidden: 32,
            heads: 2,
            k_strategy: KStrategy::Fixed,
            proportion: 0.2,
            virtual_nodes: 1,
            lr: 1e-3,
            epochs: 50,
            batch: 32,
            seed: 0,
            task: Task::GraphClassification,
            dataset: None,
            test_dataset: None,
            out: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::file_err(path))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if self.hidden == 0 {
            return bad("hidden must be >= 1");
        }
        if self.heads == 0 {
            return bad("heads must be >= 1");
        }
        if self.virtual_nodes == 0 {
            return bad("virtual-nodes must be >= 1");
        }
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be a positive number");
        }
        if !(self.proportion > 0.0 && self.proportion <= 1.0) {
            return bad("proportion must be in (0, 1]");
        }
        Ok(())
    }
}

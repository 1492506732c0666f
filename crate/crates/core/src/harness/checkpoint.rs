use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::MetricRow;
use super::model::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized model state. Floats are written with round-trip precision, so
/// a save/load cycle is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub spec: ModelSpec,
    pub epoch: usize,
    pub params: Vec<NamedParam>,
    pub history: Vec<MetricRow>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f64>, epoch: usize, history: Vec<MetricRow>) -> Self {
        let params = model
            .store
            .iter()
            .map(|(_, name, t)| NamedParam {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            config: model.config.clone(),
            spec: model.spec.clone(),
            epoch,
            params,
            history,
        }
    }

    /// Rebuilds the architecture from the stored config and fills in weights.
    pub fn to_model(&self) -> Result<Model<f64>> {
        let mut model = Model::build(&self.config, &self.spec)?;
        if model.store.len() != self.params.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint has {} parameters, architecture needs {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for p in &self.params {
            let id = model
                .store
                .id(&p.name)
                .ok_or_else(|| Error::Incompatible(format!("unknown parameter {}", p.name)))?;
            let t = Tensor::new(p.shape.clone(), p.data.clone())?;
            model
                .store
                .set(id, t)
                .map_err(|_| Error::Incompatible(format!("shape mismatch for parameter {}", p.name)))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(crate::error::file_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::file_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

//! Model assembly, training, evaluation and persistence.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Augment, Task, TrainConfig};
pub use metrics::{mrr, MetricRow};
pub use model::{Model, ModelSpec};
pub use optim::Adam;
pub use train::{evaluate, export_alloc, fit, train, TrainOutcome};

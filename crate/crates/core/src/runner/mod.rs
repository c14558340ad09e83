//! Orchestration: dataset providers, tasks, the training loop, evaluation,
//! model export and batch inference.

mod artifact;
mod infer;
mod provider;
pub mod synthetic;
mod task;
mod train;

pub use artifact::{ArtifactMetadata, ModelArtifact};
pub use infer::infer;
pub use provider::{BatchIter, DatasetProvider, FileDatasetProvider, InMemoryProvider};
pub use task::{compute_task_loss, task_readout, LabelSource, Task, TaskConfig, TaskOutput};
pub use train::{
    evaluate, forward_batch, run_training, EpochMetrics, Metrics, StepMetrics, TrainerConfig,
    TrainingHistory,
};

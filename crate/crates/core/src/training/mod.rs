//! Mini-batch training, evaluation and resumable run state.

mod config;
mod data;
mod optimizer;
mod state;
mod trainer;

pub use config::{OptimizerKind, TrainConfig};
pub use data::{load_instances, CropPolicy, Instance, Pipeline, SkippedRecord, STREAM_CROP, STREAM_ORDER};
pub use optimizer::OptimizerState;
pub use state::{load_run_state, save_run_state, BestRecord, EpochRecord, RunState};
pub use trainer::{
    batch_loss_and_grads, class_weights, epoch_order, evaluate, evaluate_patches, partition_instances, train,
    train_step, BatchItem, TrainOutcome, Trainer,
};

use crate::audio::AudioError;
use crate::dataset::DatasetError;
use crate::features::FeatureError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training config error: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("subject independence violated: patient {patient} of the evaluation split is in a training batch")]
    SubjectLeak { patient: u32 },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (max |grad| = {max_grad:e})")]
    NonFinite { epoch: usize, batch: usize, max_grad: f64 },
    #[error("run state: {0}")]
    State(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

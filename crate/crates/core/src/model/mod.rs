//! The spectrogram transformer: patch embedding, prefix tokens, pre-norm
//! encoder layers and two averaged classifier heads.

pub mod checkpoint;
mod config;
mod gradcheck;
mod network;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use gradcheck::{check_parameter_gradients, instance_loss, ParamCheck};
pub use network::{
    encoder_layer, forward, forward_patches, forward_tape, multi_head_attention, patch_matrix, patchify_embed,
    predict, self_attention, softmax, BoundParams, ForwardOutput, LayerVars, LogitVars,
};
pub use params::{ModelParams, LAYER_PARAMS};

use crate::features::FeatureError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("parameter {name}: expected {expected}, found {found}")]
    ParamMismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

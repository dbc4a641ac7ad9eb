//! The classifier: per-sample sensor graphs with attention message passing,
//! temporal attention over each sensor's embeddings, and a small MLP head.

mod checkpoint;
mod config;
mod forward;
pub mod graph;
pub mod ops;
mod params;
mod time;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use config::{Ablations, ModelConfig, Readout};
pub use forward::{
    batch_loss, classify, embed_sample, graph_regularizer, inspect, predict_proba, softmax, ForwardOptions,
    SampleEmbedding, Trace,
};
pub use graph::GraphState;
pub use params::{Bound, Layout, ModelParams};
pub use time::encode_time;

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sample {id}: {msg}")]
    Sample { id: String, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

//! Minimal reverse-mode autodiff over dense `f64` tensors, plus the layers,
//! losses, optimizer and checkpoint codec the models are built from.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, quantize, Checkpoint, CheckpointError, RngState};
pub use graph::{Gradients, Graph, Var};
pub use layers::{AdjacencyMatrix, Dense, LstmLayer, StgcnLayer};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamSet, Parameter};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
}

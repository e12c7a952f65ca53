use thiserror::Error;

use crate::autodiff::AutodiffError;

/// Errors raised while building or running the network.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("{0}: empty input sequence")]
    EmptySequence(&'static str),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("history update requested but the gating variant keeps no history")]
    NoHistory,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("embedding file: {0}")]
    Embeddings(String),
}

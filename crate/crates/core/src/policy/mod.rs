//! Tiny vision-to-token policy. Chart patches are embedded once into an
//! image memory; a causal decoder conditioned on two target tokens attends
//! to that memory and to its own prefix and emits the structured answer.

mod checkpoint;
mod infer;
mod model;
pub mod vocab;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use infer::{greedy, sample_group, score_group, score_tokens, Rollout, ScoredGroup, Session};
pub use model::{
    decoder_logits, encode_image, forward_logits, image_memory, patch_matrix, ImageMemory,
    ModelConfig, ParamVars, PolicyParams, PAD_LOGIT,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("image is {}x{}, model expects {}x{}", found.0, found.1, expected.0, expected.1)]
    ImageSize {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("unknown token id {0}")]
    UnknownToken(usize),
    #[error("prefix of {len} tokens exceeds max_len {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("empty rollout")]
    EmptyRollout,
    #[error("{path}: not a checkpoint (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported checkpoint version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated checkpoint")]
    Truncated { path: PathBuf },
    #[error("shape mismatch for tensor {tensor}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint lacks tensor {0}")]
    MissingTensor(String),
    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error("tensor {0} has non-finite values")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[cfg(test)]
mod tests;

//! The micro masked language model, LoRA adapters and checkpoints.

pub mod checkpoint;
mod config;
mod lora;
mod mlm;
mod pretrain;

pub use checkpoint::{load_checkpoint, save_checkpoint, ArchiveKind, TensorArchive};
pub use config::{MatrixRole, ModelConfig, Violation};
pub use lora::{lora_apply, LoraAdapter};
pub use mlm::{
    bias_id, is_adapter, lora_a_id, lora_b_id, weight_id, MicroMlm, TrainMode, Trainable, TrainableSummary, HEAD_BIAS,
    POSITION_EMBEDDING, TOKEN_EMBEDDING,
};
pub use pretrain::{mask_sequence, mlm_loss, pretrain_base, MaskedSequence, PretrainConfig, PretrainReport};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("adapter factor shapes A{a:?} / B{b:?} do not fit the matrix")]
    AdapterShape { a: Vec<usize>, b: Vec<usize> },
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("position {pos} outside sequence of length {len}")]
    PositionOutOfRange { pos: usize, len: usize },
    #[error("no [MASK] token at position {0}")]
    MaskAbsent(usize),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("unexpected parameter {0}")]
    UnexpectedParam(String),
    #[error("parameter {id}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        id: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("empty pretraining corpus")]
    EmptyCorpus,
    #[error("container integrity check failed")]
    ChecksumMismatch,
    #[error("malformed container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Cloze patterns, verbalizers and label scoring.

mod pattern;
mod scoring;
mod verbalizer;

pub use pattern::{Pattern, Placement, INPUT_MARKER, MASK_MARKER};
pub use scoring::{
    accuracy_prompted, encode_all, hard_labels, label_scores, label_scores_on_tape, label_scores_prompted,
    pattern_accuracy, pattern_loss, pattern_loss_on_tape, predict, PatternWeight, Prompted,
};
pub use verbalizer::{PromptSet, ResolvedVerbalizer, Verbalizer, IMDB_PROMPTS, YELP_PROMPTS};

use thiserror::Error;

use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("pattern {id}: {reason}")]
    BadTemplate { id: String, reason: String },
    #[error("pattern {id}: template needs {len} tokens but max_len is {max_len}")]
    TemplateTooLong { id: String, len: usize, max_len: usize },
    #[error("invalid verbalizer: {0}")]
    BadVerbalizer(String),
    #[error("verbalizer word {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("prompt definition file: {0}")]
    File(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty validation set")]
    EmptyValidation,
    #[error("validation example {0} has no hard label")]
    MissingLabel(u64),
    #[error("target has {found} entries, verbalizer has {expected} labels")]
    LabelCount { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

//! Corpus ingestion, tokenization, partitioning and synthetic data.

mod corpus;
mod partition;
mod synth;
mod tokenizer;

pub use corpus::{load_corpus, parse_corpus, write_corpus, CorpusFormat};
pub use partition::{
    apply_manifest, partition, ClientShard, DatasetSplit, HiddenLabels, PartitionConfig, SplitManifest,
};
pub use synth::{
    filler_word, signal_sets, signal_word, synth_background, synth_corpus, synth_sentiment, SynthConfig, SynthCorpus,
};
pub use tokenizer::{split_words, Tokenizer, MASK_ID, PAD_ID, SPECIAL_TOKENS, UNK_ID};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown label {label}")]
    UnknownLabel { line: usize, label: i64 },
    #[error("vocabulary cap {cap} too small, need at least {required}")]
    CapTooSmall { cap: usize, required: usize },
    #[error("forced vocabulary entry {0:?} is not a single word token")]
    NotASingleToken(String),
    #[error("insufficient data: need {needed} labeled records, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("unknown example id {0}")]
    UnknownExample(u64),
    #[error("example {0} has no label but is assigned to a labeled split")]
    MissingLabel(u64),
    #[error("{0}")]
    InvalidConfig(String),
}

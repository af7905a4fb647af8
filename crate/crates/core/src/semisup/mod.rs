//! Examples, accuracy-weighted soft labeling and the annotation schedule.

mod annotate;
mod ensemble;
mod example;

pub use annotate::{annotate_round, gate, plan_round, AnnotationLedger, AnnotationOutcome, AnnotationPolicy};
pub use ensemble::{soft_label_from_scores, EnsembleMode};
pub use example::{Example, ExampleId, LabelState, Origin};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Tokenizer;
use crate::model::MicroMlm;
use crate::prompting::{label_scores, Pattern, PatternWeight, PromptError, ResolvedVerbalizer};

#[derive(Debug, Error)]
pub enum SemisupError {
    #[error("soft label {0:?} is not a probability distribution")]
    NotADistribution(Vec<f64>),
    #[error("{scores} score vectors but {weights} pattern weights")]
    PatternCount { scores: usize, weights: usize },
    #[error("pattern scores disagree on the number of labels")]
    LabelCount,
    #[error("pattern weights must be finite and non-negative")]
    NegativeWeight,
    #[error("all pattern weights are zero")]
    ZeroWeight,
    #[error("labeling window exhausted with {remaining} unlabeled examples left")]
    WindowExhausted { remaining: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Soft label of `text` from the pattern ensemble weighted by `weights`.
pub fn soft_label(
    model: &MicroMlm,
    patterns: &[Pattern],
    weights: &[f64],
    verbalizer: &ResolvedVerbalizer,
    tokenizer: &Tokenizer,
    text: &str,
    mode: EnsembleMode,
) -> Result<Vec<f64>, SemisupError> {
    let scores = patterns
        .iter()
        .map(|p| Ok(label_scores(model, p, verbalizer, tokenizer, text)?.into_data()))
        .collect::<Result<Vec<_>, SemisupError>>()?;
    soft_label_from_scores(&scores, weights, mode)
}

/// One line of the annotation audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub round: usize,
    pub client: usize,
    pub example: ExampleId,
    pub distribution: Vec<f64>,
    pub weights: Vec<PatternWeight>,
    /// True label of the example, when the harness knows it. Training never
    /// reads this field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_label: Option<usize>,
}

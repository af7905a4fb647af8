use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ensemble::EnsembleMode;
use super::example::{Example, ExampleId};
use super::SemisupError;
use crate::model::Violation;

/// When and how much of the unlabeled pool gets soft-labeled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationPolicy {
    /// Share of the original unlabeled pool annotated per window round.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Validation accuracy that must be strictly exceeded before annotating.
    /// `None` disables the gate; in config files that is written `false`.
    #[serde(default = "default_gate", with = "gate_format")]
    pub accuracy_gate: Option<f64>,
    /// Annotate whatever remains at the start of the final round.
    #[serde(default = "default_true")]
    pub force_complete: bool,
    #[serde(default)]
    pub ensemble: EnsembleMode,
}

/// A gate threshold is a number, or `false` when there is no gate.
mod gate_format {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Threshold(f64),
        Flag(bool),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(t) => Repr::Threshold(*t),
            None => Repr::Flag(false),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Threshold(t) => Ok(Some(t)),
            Repr::Flag(false) => Ok(None),
            Repr::Flag(true) => Err(serde::de::Error::custom("accuracy_gate must be a threshold or false")),
        }
    }
}

fn default_fraction() -> f64 {
    0.25
}
fn default_gate() -> Option<f64> {
    Some(0.70)
}
fn default_true() -> bool {
    true
}

impl Default for AnnotationPolicy {
    fn default() -> Self {
        Self {
            fraction: default_fraction(),
            accuracy_gate: default_gate(),
            force_complete: true,
            ensemble: EnsembleMode::default(),
        }
    }
}

impl AnnotationPolicy {
    /// Field-level invariant violations as `(field, constraint)` pairs.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            out.push(Violation::new(
                "annotation.fraction",
                format!("must lie in (0, 1], got {}", self.fraction),
            ));
        }
        if let Some(g) = self.accuracy_gate {
            if !(0.0..=1.0).contains(&g) {
                out.push(Violation::new(
                    "annotation.accuracy_gate",
                    format!("must lie in [0, 1], got {g}"),
                ));
            }
        }
        out
    }

    /// Examples due per window round for a pool that started at `original`.
    pub fn quota(&self, original: usize) -> usize {
        (self.fraction * original as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

/// True iff `val_accuracy` strictly exceeds the policy gate (or no gate is set).
pub fn gate(val_accuracy: f64, policy: &AnnotationPolicy) -> bool {
    match policy.accuracy_gate {
        Some(g) => val_accuracy > g,
        None => true,
    }
}

/// One client's annotation bookkeeping across rounds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLedger {
    /// Size of the unlabeled pool before any annotation.
    pub original: usize,
    /// Quota deferred by closed gates, still owed.
    pub owed: usize,
}

impl AnnotationLedger {
    pub fn new(original: usize) -> Self {
        Self { original, owed: 0 }
    }
}

/// What happened to one client in one round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnnotationOutcome {
    /// Outside the window or nothing left to annotate.
    Idle,
    /// Gate closed; the round's quota was deferred.
    Deferred { owed: usize },
    /// These examples moved from the unlabeled to the labeled set.
    Annotated { ids: Vec<ExampleId> },
}

/// Number of examples to annotate for this client in `round` (1-based, of
/// `total_rounds`). Window rounds are those before the final one; the final
/// round force-completes when the policy says so. Updates the ledger.
pub fn plan_round(
    ledger: &mut AnnotationLedger,
    remaining: usize,
    round: usize,
    total_rounds: usize,
    gate_open: bool,
    policy: &AnnotationPolicy,
) -> Result<usize, SemisupError> {
    if remaining == 0 {
        ledger.owed = 0;
        return Ok(0);
    }
    if round >= total_rounds {
        return if policy.force_complete {
            ledger.owed = 0;
            Ok(remaining)
        } else {
            Err(SemisupError::WindowExhausted { remaining })
        };
    }
    ledger.owed += policy.quota(ledger.original);
    if !gate_open {
        return Ok(0);
    }
    let take = ledger.owed.min(remaining);
    ledger.owed = 0;
    Ok(take)
}

/// One annotation round for one client.
///
/// Selects `plan_round(..)` examples uniformly at random from `unlabeled`
/// using `rng`, labels each with `labeler`, and moves them to `labeled`.
/// The remaining pool keeps its relative order.
#[allow(clippy::too_many_arguments)]
pub fn annotate_round<R: Rng>(
    labeled: &mut Vec<Example>,
    unlabeled: &mut Vec<Example>,
    ledger: &mut AnnotationLedger,
    round: usize,
    total_rounds: usize,
    gate_open: bool,
    policy: &AnnotationPolicy,
    rng: &mut R,
    mut labeler: impl FnMut(&Example) -> Result<Vec<f64>, SemisupError>,
) -> Result<AnnotationOutcome, SemisupError> {
    let take = plan_round(ledger, unlabeled.len(), round, total_rounds, gate_open, policy)?;
    if take == 0 {
        return Ok(if ledger.owed > 0 && !gate_open {
            AnnotationOutcome::Deferred { owed: ledger.owed }
        } else {
            AnnotationOutcome::Idle
        });
    }
    let picks = sample(rng, unlabeled.len(), take).into_vec();
    let mut chosen = vec![false; unlabeled.len()];
    let mut annotated = Vec::with_capacity(take);
    for &i in &picks {
        chosen[i] = true;
        let e = &unlabeled[i];
        let dist = labeler(e)?;
        annotated.push(Example::annotated(e.id, e.text.clone(), dist, round)?);
    }
    let mut kept = Vec::with_capacity(unlabeled.len() - take);
    for (e, c) in unlabeled.drain(..).zip(&chosen) {
        if !c {
            kept.push(e);
        }
    }
    *unlabeled = kept;
    let ids = annotated.iter().map(|e| e.id).collect();
    labeled.extend(annotated);
    Ok(AnnotationOutcome::Annotated { ids })
}

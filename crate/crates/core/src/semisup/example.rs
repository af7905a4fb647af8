use std::fmt;

use serde::{Deserialize, Serialize};

use super::SemisupError;
use crate::numerics::ops::DISTRIBUTION_TOLERANCE;

/// Stable example identifier (input order of the corpus).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExampleId(pub u64);

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What a training example knows about its label. `Unlabeled` carries no
/// label at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelState {
    Hard(usize),
    Soft(Vec<f64>),
    Unlabeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Present in the input data (seed-labeled, validation, test or pool).
    Seed,
    /// Soft-labeled by the ensemble in the given global round.
    Annotated { round: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: ExampleId,
    pub text: String,
    label: LabelState,
    origin: Origin,
}

impl Example {
    pub fn hard(id: ExampleId, text: impl Into<String>, label: usize) -> Self {
        Self {
            id,
            text: text.into(),
            label: LabelState::Hard(label),
            origin: Origin::Seed,
        }
    }

    pub fn unlabeled(id: ExampleId, text: impl Into<String>) -> Self {
        Self {
            id,
            text: text.into(),
            label: LabelState::Unlabeled,
            origin: Origin::Seed,
        }
    }

    /// A soft-labeled example produced in `round`.
    pub fn annotated(
        id: ExampleId,
        text: impl Into<String>,
        distribution: Vec<f64>,
        round: usize,
    ) -> Result<Self, SemisupError> {
        let sum: f64 = distribution.iter().sum();
        if distribution.is_empty()
            || distribution.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE
        {
            return Err(SemisupError::NotADistribution(distribution));
        }
        Ok(Self {
            id,
            text: text.into(),
            label: LabelState::Soft(distribution),
            origin: Origin::Annotated { round },
        })
    }

    pub fn label(&self) -> &LabelState {
        &self.label
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn hard_label(&self) -> Option<usize> {
        match self.label {
            LabelState::Hard(l) => Some(l),
            _ => None,
        }
    }

    /// Drops the label. Used when moving an example into an unlabeled pool.
    pub fn into_unlabeled(self) -> Self {
        Self {
            label: LabelState::Unlabeled,
            ..self
        }
    }

    /// Training target over `n_labels` classes: one-hot for hard labels, the
    /// stored distribution for soft ones.
    pub fn target(&self, n_labels: usize) -> Option<Vec<f64>> {
        match &self.label {
            LabelState::Hard(l) => {
                let mut t = vec![0.0; n_labels];
                *t.get_mut(*l)? = 1.0;
                Some(t)
            }
            LabelState::Soft(d) if d.len() == n_labels => Some(d.clone()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_labels_must_be_distributions() {
        assert!(Example::annotated(ExampleId(0), "x", vec![0.3, 0.7], 1).is_ok());
        assert!(Example::annotated(ExampleId(0), "x", vec![0.3, 0.6], 1).is_err());
        assert!(Example::annotated(ExampleId(0), "x", vec![-0.1, 1.1], 1).is_err());
    }

    #[test]
    fn targets() {
        assert_eq!(Example::hard(ExampleId(1), "a", 1).target(2), Some(vec![0.0, 1.0]));
        assert_eq!(Example::hard(ExampleId(1), "a", 3).target(2), None);
        assert_eq!(Example::unlabeled(ExampleId(1), "a").target(2), None);
        let e = Example::annotated(ExampleId(2), "b", vec![0.25, 0.75], 2).unwrap();
        assert_eq!(e.origin(), Origin::Annotated { round: 2 });
        assert_eq!(e.target(2), Some(vec![0.25, 0.75]));
    }
}

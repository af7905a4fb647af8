use serde::{Deserialize, Serialize};

use super::SemisupError;
use crate::numerics::ops::softmax_slice;

/// How per-pattern label scores are combined into one distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Softmax each pattern's scores, then take the weighted average.
    #[default]
    Probability,
    /// Weighted average of the raw scores, then a single softmax.
    RawScore,
}

/// Accuracy-weighted ensemble of per-pattern label scores.
///
/// `scores[p]` holds pattern `p`'s label scores and `weights[p]` its
/// validation accuracy. Patterns with zero weight do not contribute.
pub fn soft_label_from_scores(
    scores: &[Vec<f64>],
    weights: &[f64],
    mode: EnsembleMode,
) -> Result<Vec<f64>, SemisupError> {
    if scores.is_empty() || scores.len() != weights.len() {
        return Err(SemisupError::PatternCount {
            scores: scores.len(),
            weights: weights.len(),
        });
    }
    let n_labels = scores[0].len();
    if n_labels == 0 || scores.iter().any(|s| s.len() != n_labels) {
        return Err(SemisupError::LabelCount);
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(SemisupError::NegativeWeight);
    }
    let z: f64 = weights.iter().sum();
    if z <= 0.0 {
        return Err(SemisupError::ZeroWeight);
    }
    let mut acc = vec![0.0; n_labels];
    match mode {
        EnsembleMode::Probability => {
            let mut probs = vec![0.0; n_labels];
            for (s, &w) in scores.iter().zip(weights) {
                softmax_slice(s, &mut probs);
                for (a, p) in acc.iter_mut().zip(&probs) {
                    *a += w * p;
                }
            }
            for a in &mut acc {
                *a /= z;
            }
            Ok(acc)
        }
        EnsembleMode::RawScore => {
            for (s, &w) in scores.iter().zip(weights) {
                for (a, x) in acc.iter_mut().zip(s) {
                    *a += w * x;
                }
            }
            for a in &mut acc {
                *a /= z;
            }
            let mut out = vec![0.0; n_labels];
            softmax_slice(&acc, &mut out);
            Ok(out)
        }
    }
}

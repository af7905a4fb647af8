use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A weight matrix inside a transformer layer that may carry an adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRole {
    Query,
    Key,
    Value,
    Output,
    FfnUp,
    FfnDown,
}

impl MatrixRole {
    pub const ALL: [MatrixRole; 6] = [
        MatrixRole::Query,
        MatrixRole::Key,
        MatrixRole::Value,
        MatrixRole::Output,
        MatrixRole::FfnUp,
        MatrixRole::FfnDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MatrixRole::Query => "query",
            MatrixRole::Key => "key",
            MatrixRole::Value => "value",
            MatrixRole::Output => "output",
            MatrixRole::FfnUp => "ffn_up",
            MatrixRole::FfnDown => "ffn_down",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    /// `(d, k)`: output and input widths of the stored `d × k` matrix.
    pub fn dims(self, cfg: &ModelConfig) -> (usize, usize) {
        match self {
            MatrixRole::FfnUp => (cfg.d_ff, cfg.d_model),
            MatrixRole::FfnDown => (cfg.d_model, cfg.d_ff),
            _ => (cfg.d_model, cfg.d_model),
        }
    }
}

impl fmt::Display for MatrixRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A broken configuration invariant: which field, and what it must satisfy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub constraint: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            constraint: constraint.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.constraint)
    }
}

fn default_d_model() -> usize {
    64
}
fn default_n_layers() -> usize {
    2
}
fn default_n_heads() -> usize {
    4
}
fn default_d_ff() -> usize {
    128
}
fn default_max_len() -> usize {
    128
}
fn default_rank() -> usize {
    8
}
fn default_targets() -> BTreeSet<MatrixRole> {
    [MatrixRole::Query, MatrixRole::Value].into_iter().collect()
}
fn default_init_std() -> f64 {
    0.02
}
fn default_ln_eps() -> f64 {
    1e-5
}

/// Shape and adapter placement of the micro masked language model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_n_layers")]
    pub n_layers: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_rank")]
    pub lora_rank: usize,
    #[serde(default = "default_targets")]
    pub lora_targets: BTreeSet<MatrixRole>,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: default_d_model(),
            n_layers: default_n_layers(),
            n_heads: default_n_heads(),
            d_ff: default_d_ff(),
            max_len: default_max_len(),
            lora_rank: default_rank(),
            lora_targets: default_targets(),
            init_std: default_init_std(),
            layer_norm_eps: default_ln_eps(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Every adapted matrix as `(layer, role, d, k)`.
    pub fn adapted_matrices(&self) -> Vec<(usize, MatrixRole, usize, usize)> {
        (0..self.n_layers)
            .flat_map(|l| {
                self.lora_targets.iter().map(move |&role| {
                    let (d, k) = role.dims(self);
                    (l, role, d, k)
                })
            })
            .collect()
    }

    /// Adapter parameter count: Σ r·(d + k) over adapted matrices.
    pub fn adapter_param_count(&self) -> usize {
        self.adapted_matrices()
            .iter()
            .map(|&(_, _, d, k)| self.lora_rank * (d + k))
            .sum()
    }

    /// Parameter count of the base model without adapters.
    pub fn base_param_count(&self) -> usize {
        let d = self.d_model;
        let embed = self.vocab_size * d + self.max_len * d;
        let per_layer = 4 * (d * d + d) + (self.d_ff * d + self.d_ff) + (d * self.d_ff + d) + 4 * d;
        embed + self.n_layers * per_layer + 2 * d + self.vocab_size
    }

    /// All parameters, base plus adapters.
    pub fn total_param_count(&self) -> usize {
        self.base_param_count() + self.adapter_param_count()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (field, value) in [
            ("model.vocab_size", self.vocab_size),
            ("model.d_model", self.d_model),
            ("model.n_layers", self.n_layers),
            ("model.n_heads", self.n_heads),
            ("model.d_ff", self.d_ff),
            ("model.max_len", self.max_len),
            ("model.lora_rank", self.lora_rank),
        ] {
            if value == 0 {
                v.push(Violation::new(field, "must be a positive integer"));
            }
        }
        if self.n_heads > 0 && !self.d_model.is_multiple_of(self.n_heads) {
            v.push(Violation::new(
                "model.n_heads",
                format!(
                    "d_model ({}) must be divisible by n_heads ({})",
                    self.d_model, self.n_heads
                ),
            ));
        }
        for &(_, role, d, k) in self.adapted_matrices().iter().take(self.lora_targets.len()) {
            if self.lora_rank >= d.min(k) {
                v.push(Violation::new(
                    "model.lora_rank",
                    format!(
                        "LoRA rank r = {} must satisfy r < min(d, k) = {} for the {role} matrix ({d}x{k})",
                        self.lora_rank,
                        d.min(k)
                    ),
                ));
            }
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            v.push(Violation::new("model.init_std", "must be positive and finite"));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            v.push(Violation::new("model.layer_norm_eps", "must be positive"));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_adapter_count() {
        let cfg = ModelConfig::new(2000);
        assert_eq!(cfg.adapter_param_count(), 2 * 2 * 8 * (64 + 64));
        assert_eq!(cfg.adapter_param_count(), 4096);
        assert!(cfg.validate().is_empty());
    }

    #[test]
    fn rank_constraint_is_reported() {
        let mut cfg = ModelConfig::new(100);
        cfg.lora_rank = 64;
        let v = cfg.validate();
        assert_eq!(v.len(), 2);
        assert!(v[0].constraint.contains("r < min(d, k)"));
    }

    #[test]
    fn heads_must_divide_width() {
        let mut cfg = ModelConfig::new(100);
        cfg.n_heads = 5;
        assert!(cfg.validate().iter().any(|v| v.field == "model.n_heads"));
    }
}

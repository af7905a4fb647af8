//! Bidirectional pre-LN transformer encoder with a tied masked-token head.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{MatrixRole, ModelConfig};
use super::lora::LoraAdapter;
use super::ModelError;
use crate::data::MASK_ID;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// Which parameters train: adapters only (LP) or everything (FP).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Lp,
    Fp,
}

/// Parameters that receive gradients on a given tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Nothing,
    Adapters,
    Base,
    All,
}

impl From<TrainMode> for Trainable {
    fn from(m: TrainMode) -> Self {
        match m {
            TrainMode::Lp => Trainable::Adapters,
            TrainMode::Fp => Trainable::All,
        }
    }
}

pub fn weight_id(layer: usize, role: MatrixRole) -> ParamId {
    ParamId::new(format!("layer{layer}.{role}.weight"))
}

pub fn bias_id(layer: usize, role: MatrixRole) -> ParamId {
    ParamId::new(format!("layer{layer}.{role}.bias"))
}

pub fn lora_a_id(layer: usize, role: MatrixRole) -> ParamId {
    ParamId::new(format!("layer{layer}.{role}.lora_a"))
}

pub fn lora_b_id(layer: usize, role: MatrixRole) -> ParamId {
    ParamId::new(format!("layer{layer}.{role}.lora_b"))
}

pub fn is_adapter(id: &ParamId) -> bool {
    let s = id.as_str();
    s.ends_with(".lora_a") || s.ends_with(".lora_b")
}

fn ln_ids(prefix: &str) -> (ParamId, ParamId) {
    (
        ParamId::new(format!("{prefix}.gamma")),
        ParamId::new(format!("{prefix}.beta")),
    )
}

pub const TOKEN_EMBEDDING: &str = "embed.token";
pub const POSITION_EMBEDDING: &str = "embed.position";
pub const HEAD_BIAS: &str = "head.bias";

/// Frozen base weights `W0`, per-matrix LoRA adapters and a training mode.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroMlm {
    config: ModelConfig,
    params: ParamStore,
    mode: TrainMode,
}

impl MicroMlm {
    /// Seeded random initialization. Weights `N(0, init_std²)`, zero biases,
    /// unit layer-norm gains, adapters with `A ~ N(0, init_std²)` and `B = 0`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        if let Some(v) = config.validate().into_iter().next() {
            return Err(ModelError::Config(v.to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let std = config.init_std;
        let mut params = ParamStore::new();
        params.insert(
            TOKEN_EMBEDDING.into(),
            Tensor::randn(&[config.vocab_size, d], std, &mut rng),
        );
        params.insert(
            POSITION_EMBEDDING.into(),
            Tensor::randn(&[config.max_len, d], std, &mut rng),
        );
        for l in 0..config.n_layers {
            for prefix in [format!("layer{l}.ln1"), format!("layer{l}.ln2")] {
                let (g, b) = ln_ids(&prefix);
                params.insert(g, Tensor::filled(&[d], 1.0));
                params.insert(b, Tensor::zeros(&[d]));
            }
            for role in MatrixRole::ALL {
                let (rows, cols) = role.dims(&config);
                params.insert(weight_id(l, role), Tensor::randn(&[rows, cols], std, &mut rng));
                params.insert(bias_id(l, role), Tensor::zeros(&[rows]));
            }
        }
        let (g, b) = ln_ids("final_ln");
        params.insert(g, Tensor::filled(&[d], 1.0));
        params.insert(b, Tensor::zeros(&[d]));
        params.insert(HEAD_BIAS.into(), Tensor::zeros(&[config.vocab_size, 1]));

        // Adapters draw from their own stream so that adapter placement does
        // not perturb the base initialization.
        let mut adapter_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4c6f_5241_0000_0001);
        for (l, role, rows, cols) in config.adapted_matrices() {
            let ad = LoraAdapter::init(rows, cols, config.lora_rank, std, &mut adapter_rng);
            params.insert(lora_a_id(l, role), ad.a);
            params.insert(lora_b_id(l, role), ad.b);
        }
        Ok(Self {
            config,
            params,
            mode: TrainMode::Lp,
        })
    }

    /// Rebuilds a model from stored parameters, checking every expected
    /// tensor is present with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamStore, mode: TrainMode) -> Result<Self, ModelError> {
        let template = Self::init(config.clone(), 0)?;
        for (id, t) in template.params.iter() {
            match params.get(id) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(ModelError::ParamShape {
                        id: id.to_string(),
                        expected: t.shape().to_vec(),
                        found: p.shape().to_vec(),
                    })
                }
                None => return Err(ModelError::MissingParam(id.to_string())),
            }
        }
        if let Some(extra) = params.ids().find(|id| !template.params.contains(id)) {
            return Err(ModelError::UnexpectedParam(extra.to_string()));
        }
        Ok(Self { config, params, mode })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: TrainMode) {
        self.mode = mode;
    }

    pub fn with_mode(mut self, mode: TrainMode) -> Self {
        self.mode = mode;
        self
    }

    /// The adapter on one matrix, if that matrix is adapted.
    pub fn adapter(&self, layer: usize, role: MatrixRole) -> Option<LoraAdapter> {
        let a = self.params.get(&lora_a_id(layer, role))?;
        let b = self.params.get(&lora_b_id(layer, role))?;
        Some(LoraAdapter {
            a: (**a).clone(),
            b: (**b).clone(),
        })
    }

    /// Base weights only.
    pub fn base_params(&self) -> ParamStore {
        let ids: Vec<ParamId> = self.params.ids().filter(|id| !is_adapter(id)).cloned().collect();
        self.params.subset(&ids)
    }

    /// Adapter tensors only.
    pub fn adapter_params(&self) -> ParamStore {
        let ids: Vec<ParamId> = self.params.ids().filter(|id| is_adapter(id)).cloned().collect();
        self.params.subset(&ids)
    }

    pub fn trainable_ids(&self, which: Trainable) -> Vec<ParamId> {
        self.params
            .ids()
            .filter(|id| is_trainable(which, id))
            .cloned()
            .collect()
    }

    fn reg(&self, g: &mut Graph, id: &ParamId, which: Trainable) -> Result<Var, ModelError> {
        let t = self
            .params
            .get(id)
            .ok_or_else(|| ModelError::MissingParam(id.to_string()))?;
        Ok(g.param(id, Arc::clone(t), is_trainable(which, id)))
    }

    fn reg_str(&self, g: &mut Graph, id: &str, which: Trainable) -> Result<Var, ModelError> {
        self.reg(g, &ParamId::new(id), which)
    }

    /// `x·W0ᵀ + (x·Aᵀ)·Bᵀ + bias`; the adapter term is present only for
    /// adapted matrices.
    fn linear(
        &self,
        g: &mut Graph,
        x: Var,
        layer: usize,
        role: MatrixRole,
        which: Trainable,
    ) -> Result<Var, ModelError> {
        let w = self.reg(g, &weight_id(layer, role), which)?;
        let mut y = g.matmul_t(x, false, w, true)?;
        if self.config.lora_targets.contains(&role) {
            let a = self.reg(g, &lora_a_id(layer, role), which)?;
            let b = self.reg(g, &lora_b_id(layer, role), which)?;
            let low = g.matmul_t(x, false, a, true)?;
            let delta = g.matmul_t(low, false, b, true)?;
            y = g.add(y, delta)?;
        }
        let bias = self.reg(g, &bias_id(layer, role), which)?;
        Ok(g.add_row(y, bias)?)
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, prefix: &str, which: Trainable) -> Result<Var, ModelError> {
        let (gid, bid) = ln_ids(prefix);
        let gamma = self.reg(g, &gid, which)?;
        let beta = self.reg(g, &bid, which)?;
        Ok(g.layer_norm(x, gamma, beta, self.config.layer_norm_eps)?)
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if ids.len() > self.config.max_len {
            return Err(ModelError::SequenceTooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id: bad,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Final hidden states `[rows.len() × d_model]` for the requested
    /// positions. The last layer computes queries, residuals and the
    /// feed-forward block only for those positions.
    pub fn encode(&self, g: &mut Graph, ids: &[usize], rows: &[usize], which: Trainable) -> Result<Var, ModelError> {
        self.check_tokens(ids)?;
        let n = ids.len();
        if rows.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(ModelError::PositionOutOfRange { pos: bad, len: n });
        }
        let tok_table = self.reg_str(g, TOKEN_EMBEDDING, which)?;
        let pos_table = self.reg_str(g, POSITION_EMBEDDING, which)?;
        let tok = g.gather_rows(tok_table, ids)?;
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.gather_rows(pos_table, &positions)?;
        let mut x = g.add(tok, pos)?;

        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        for l in 0..self.config.n_layers {
            let last = l + 1 == self.config.n_layers;
            let h = self.layer_norm(g, x, &format!("layer{l}.ln1"), which)?;
            let (q_in, resid) = if last {
                (g.gather_rows(h, rows)?, g.gather_rows(x, rows)?)
            } else {
                (h, x)
            };
            let q = self.linear(g, q_in, l, MatrixRole::Query, which)?;
            let k = self.linear(g, h, l, MatrixRole::Key, which)?;
            let v = self.linear(g, h, l, MatrixRole::Value, which)?;
            let mut heads = Vec::with_capacity(self.config.n_heads);
            for head in 0..self.config.n_heads {
                let qh = g.slice_cols(q, head * dh, dh)?;
                let kh = g.slice_cols(k, head * dh, dh)?;
                let vh = g.slice_cols(v, head * dh, dh)?;
                let scores = g.matmul_t(qh, false, kh, true)?;
                let scores = g.scale(scores, scale)?;
                let att = g.softmax_rows(scores)?;
                heads.push(g.matmul(att, vh)?);
            }
            let cat = g.concat_cols(&heads)?;
            let attn_out = self.linear(g, cat, l, MatrixRole::Output, which)?;
            x = g.add(resid, attn_out)?;

            let h2 = self.layer_norm(g, x, &format!("layer{l}.ln2"), which)?;
            let up = self.linear(g, h2, l, MatrixRole::FfnUp, which)?;
            let act = g.gelu(up)?;
            let down = self.linear(g, act, l, MatrixRole::FfnDown, which)?;
            x = g.add(x, down)?;
        }
        self.layer_norm(g, x, "final_ln", which)
    }

    fn check_mask(&self, ids: &[usize], mask_pos: usize) -> Result<(), ModelError> {
        self.check_tokens(ids)?;
        if mask_pos >= ids.len() {
            return Err(ModelError::PositionOutOfRange {
                pos: mask_pos,
                len: ids.len(),
            });
        }
        if ids[mask_pos] != MASK_ID {
            return Err(ModelError::MaskAbsent(mask_pos));
        }
        Ok(())
    }

    /// Full-vocabulary logits `[rows.len() × vocab]` on a tape.
    pub fn vocab_logits(
        &self,
        g: &mut Graph,
        ids: &[usize],
        rows: &[usize],
        which: Trainable,
    ) -> Result<Var, ModelError> {
        let h = self.encode(g, ids, rows, which)?;
        let table = self.reg_str(g, TOKEN_EMBEDDING, which)?;
        let logits = g.matmul_t(h, false, table, true)?;
        let bias = self.reg_str(g, HEAD_BIAS, which)?;
        Ok(g.add_row(logits, bias)?)
    }

    /// Logits `[1 × words.len()]` of selected vocabulary entries at the mask
    /// position. Each entry is bitwise equal to the corresponding entry of
    /// [`MicroMlm::forward_mask_logits`].
    pub fn word_logits(
        &self,
        g: &mut Graph,
        ids: &[usize],
        mask_pos: usize,
        words: &[usize],
        which: Trainable,
    ) -> Result<Var, ModelError> {
        self.check_mask(ids, mask_pos)?;
        if let Some(&bad) = words.iter().find(|&&w| w >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id: bad,
                vocab_size: self.config.vocab_size,
            });
        }
        let h = self.encode(g, ids, &[mask_pos], which)?;
        let table = self.reg_str(g, TOKEN_EMBEDDING, which)?;
        let rows = g.gather_rows(table, words)?;
        let logits = g.matmul_t(h, false, rows, true)?;
        let bias_table = self.reg_str(g, HEAD_BIAS, which)?;
        let bias = g.gather_rows(bias_table, words)?;
        Ok(g.add_row(logits, bias)?)
    }

    /// One logit per vocabulary entry at `mask_pos`.
    pub fn forward_mask_logits(&self, ids: &[usize], mask_pos: usize) -> Result<Tensor, ModelError> {
        self.check_mask(ids, mask_pos)?;
        let mut g = Graph::new();
        let v = self.vocab_logits(&mut g, ids, &[mask_pos], Trainable::Nothing)?;
        let t = g.value(v).clone();
        Ok(t.reshape(vec![self.config.vocab_size])?)
    }

    /// Trainable parameters under `mode`, with counts.
    pub fn trainable_parameters(&self, mode: TrainMode) -> TrainableSummary {
        let ids = self.trainable_ids(mode.into());
        let count = ids.iter().map(|id| self.params.get(id).map_or(0, |t| t.len())).sum();
        let lp = self
            .params
            .iter()
            .filter(|(id, _)| is_adapter(id))
            .map(|(_, t)| t.len())
            .sum::<usize>();
        let fp = self.params.scalar_count();
        TrainableSummary {
            ids,
            count,
            total: fp,
            lp_to_fp_ratio: lp as f64 / fp as f64,
        }
    }
}

/// Result of [`MicroMlm::trainable_parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableSummary {
    pub ids: Vec<ParamId>,
    pub count: usize,
    pub total: usize,
    pub lp_to_fp_ratio: f64,
}

fn is_trainable(which: Trainable, id: &ParamId) -> bool {
    match which {
        Trainable::Nothing => false,
        Trainable::All => true,
        Trainable::Adapters => is_adapter(id),
        Trainable::Base => !is_adapter(id),
    }
}

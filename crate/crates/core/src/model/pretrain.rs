//! Masked-token pretraining of the base weights.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlm::{MicroMlm, Trainable};
use super::ModelError;
use crate::data::MASK_ID;
use crate::numerics::{AdamConfig, Graph, Optimizer, OptimizerKind, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            mask_prob: 0.15,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// A masked copy of a sequence and the original ids at the masked positions.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSequence {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Masks each position with probability `mask_prob`, always at least one.
pub fn mask_sequence<R: Rng + ?Sized>(tokens: &[usize], max_len: usize, mask_prob: f64, rng: &mut R) -> MaskedSequence {
    let tokens = &tokens[..tokens.len().min(max_len)];
    let mut positions: Vec<usize> = (0..tokens.len()).filter(|_| rng.gen::<f64>() < mask_prob).collect();
    if positions.is_empty() {
        positions.push(rng.gen_range(0..tokens.len()));
    }
    let mut ids = tokens.to_vec();
    let targets = positions.iter().map(|&p| tokens[p]).collect();
    for &p in &positions {
        ids[p] = MASK_ID;
    }
    MaskedSequence {
        ids,
        positions,
        targets,
    }
}

fn one_hot_rows(targets: &[usize], vocab: usize) -> Tensor {
    let mut data = vec![0.0; targets.len() * vocab];
    for (i, &t) in targets.iter().enumerate() {
        data[i * vocab + t] = 1.0;
    }
    Tensor::new(vec![targets.len(), vocab], data).expect("one-hot rows are valid")
}

/// Mean masked-token cross-entropy over a set of masked sequences.
pub fn mlm_loss(model: &MicroMlm, batch: &[MaskedSequence]) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let loss = mlm_loss_on_tape(model, &mut g, batch, Trainable::Nothing)?;
    Ok(g.value(loss).item())
}

fn mlm_loss_on_tape(
    model: &MicroMlm,
    g: &mut Graph,
    batch: &[MaskedSequence],
    which: Trainable,
) -> Result<crate::numerics::Var, ModelError> {
    let vocab = model.config().vocab_size;
    let mut losses = Vec::with_capacity(batch.len());
    for seq in batch {
        let logits = model.vocab_logits(g, &seq.ids, &seq.positions, which)?;
        let target = Arc::new(one_hot_rows(&seq.targets, vocab));
        losses.push(g.soft_cross_entropy(logits, target)?);
    }
    Ok(g.mean(&losses)?)
}

/// Per-step training losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
}

/// Trains the base weights with a masked-token objective. Adapters are not
/// touched, so every `B` stays zero.
pub fn pretrain_base(
    model: &mut MicroMlm,
    corpus: &[Vec<usize>],
    cfg: &PretrainConfig,
) -> Result<PretrainReport, ModelError> {
    let corpus: Vec<&Vec<usize>> = corpus.iter().filter(|s| !s.is_empty()).collect();
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if !(cfg.mask_prob > 0.0 && cfg.mask_prob < 1.0) {
        return Err(ModelError::Config(format!(
            "mask_prob must lie in (0, 1), got {}",
            cfg.mask_prob
        )));
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(OptimizerKind::Adam(AdamConfig::with_lr(cfg.lr)));
    let max_len = model.config().max_len;
    let mut report = PretrainReport::default();
    for _ in 0..cfg.steps {
        let batch: Vec<MaskedSequence> = (0..cfg.batch_size)
            .map(|_| {
                let seq = corpus.choose(&mut rng).expect("non-empty");
                mask_sequence(seq, max_len, cfg.mask_prob, &mut rng)
            })
            .collect();
        let mut g = Graph::new();
        let loss = mlm_loss_on_tape(model, &mut g, &batch, Trainable::Base)?;
        report.losses.push(g.value(loss).item());
        let grads = g.backward(loss)?;
        drop(g);
        opt.step(model.params_mut(), &grads)?;
    }
    Ok(report)
}

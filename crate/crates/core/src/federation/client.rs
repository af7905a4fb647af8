use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, FederationError, FlConfig, STREAM_SHUFFLE};
use crate::data::{ClientShard, Tokenizer};
use crate::model::{MicroMlm, Trainable};
use crate::numerics::{Graph, Optimizer, ParamStore};
use crate::prompting::{
    label_scores_prompted, pattern_loss_on_tape, Pattern, PromptError, Prompted, ResolvedVerbalizer,
};
use crate::semisup::{AnnotationLedger, Example};

/// What every participant shares: patterns, verbalizer and tokenizer.
#[derive(Clone, Debug)]
pub struct Task {
    pub patterns: Vec<Pattern>,
    pub verbalizer: ResolvedVerbalizer,
    pub tokenizer: Tokenizer,
    pub max_len: usize,
}

impl Task {
    pub fn new(
        patterns: Vec<Pattern>,
        verbalizer: ResolvedVerbalizer,
        tokenizer: Tokenizer,
        max_len: usize,
    ) -> Result<Self, FederationError> {
        if patterns.is_empty() {
            return Err(FederationError::Config("at least one pattern is required".into()));
        }
        Ok(Self {
            patterns,
            verbalizer,
            tokenizer,
            max_len,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.verbalizer.num_labels()
    }

    /// Every pattern applied to `text`, in pattern order.
    pub fn prompts(&self, text: &str) -> Result<Vec<Prompted>, PromptError> {
        let ids = self.tokenizer.encode(text);
        self.patterns
            .iter()
            .map(|p| {
                let (ids, mask_pos) = p.apply_ids(&ids, &self.tokenizer, self.max_len)?;
                Ok(Prompted { ids, mask_pos })
            })
            .collect()
    }

    /// Label scores of every pattern for one set of prompts.
    pub fn scores(&self, model: &MicroMlm, prompts: &[Prompted]) -> Result<Vec<Vec<f64>>, PromptError> {
        prompts
            .iter()
            .map(|p| Ok(label_scores_prompted(model, p, &self.verbalizer)?.into_data()))
            .collect()
    }

    pub fn scores_for_text(&self, model: &MicroMlm, text: &str) -> Result<Vec<Vec<f64>>, PromptError> {
        self.scores(model, &self.prompts(text)?)
    }
}

/// One client's local training result.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    /// Trainable parameters after local training (adapters in LP mode,
    /// everything in FP mode).
    pub params: ParamStore,
    /// Labeled-set size used as the FedAvg weight.
    pub n_k: usize,
    /// Mean mini-batch loss over the last local epoch, if any step ran.
    pub train_loss: Option<f64>,
}

/// A simulated participant: labeled set `T_k`, unlabeled pool `U_k`,
/// annotation ledger and local optimizer state.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub ledger: AnnotationLedger,
    pub optimizer: Optimizer,
    /// Prompts of `labeled[i]`, indexed `[example][pattern]`.
    prompts: Vec<Vec<Prompted>>,
}

impl ClientState {
    pub fn new(id: usize, shard: ClientShard, optimizer: Optimizer) -> Self {
        Self {
            id,
            ledger: AnnotationLedger::new(shard.unlabeled.len()),
            labeled: shard.labeled,
            unlabeled: shard.unlabeled,
            optimizer,
            prompts: Vec::new(),
        }
    }

    /// Encodes prompts for labeled examples added since the last call.
    fn sync_prompts(&mut self, task: &Task) -> Result<(), PromptError> {
        if self.prompts.len() > self.labeled.len() {
            self.prompts.clear();
        }
        for e in &self.labeled[self.prompts.len()..] {
            self.prompts.push(task.prompts(&e.text)?);
        }
        Ok(())
    }

    /// `E` epochs of mini-batch training over `T_k` starting from `global`.
    ///
    /// Each epoch visits `T_k` in an order shuffled by a seed derived from
    /// the run seed, client, round and epoch. A batch's loss is the mean over
    /// patterns of each pattern's mean soft cross-entropy.
    pub fn client_update(
        &mut self,
        global: &MicroMlm,
        task: &Task,
        config: &FlConfig,
        round: usize,
    ) -> Result<ClientUpdate, FederationError> {
        if self.labeled.is_empty() {
            return Err(FederationError::EmptyLabeledSet(self.id));
        }
        self.sync_prompts(task)?;
        let n_labels = task.num_labels();
        let targets = self
            .labeled
            .iter()
            .map(|e| {
                e.target(n_labels).ok_or(PromptError::LabelCount {
                    expected: n_labels,
                    found: 0,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let which = Trainable::from(global.mode());
        let mut model = global.clone();
        let mut order: Vec<usize> = (0..self.labeled.len()).collect();
        let mut train_loss = None;
        for epoch in 0..config.local_epochs {
            let seed = derive_seed(
                config.seed,
                &[STREAM_SHUFFLE, self.id as u64, round as u64, epoch as u64],
            );
            order.sort_unstable();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut total = 0.0;
            let mut batches = 0usize;
            for batch in order.chunks(config.batch_size.max(1)) {
                let mut g = Graph::new();
                let mut terms = Vec::with_capacity(task.patterns.len());
                for p in 0..task.patterns.len() {
                    let pairs: Vec<(&Prompted, &[f64])> = batch
                        .iter()
                        .map(|&i| (&self.prompts[i][p], targets[i].as_slice()))
                        .collect();
                    terms.push(pattern_loss_on_tape(&mut g, &model, &pairs, &task.verbalizer, which)?);
                }
                let loss = g.mean(&terms)?;
                total += g.value(loss).item();
                batches += 1;
                let grads = g.backward(loss)?;
                drop(g);
                self.optimizer.step(model.params_mut(), &grads)?;
            }
            train_loss = Some(total / batches as f64);
        }
        let ids = model.trainable_ids(which);
        Ok(ClientUpdate {
            params: model.params().subset(&ids),
            n_k: self.labeled.len(),
            train_loss,
        })
    }
}

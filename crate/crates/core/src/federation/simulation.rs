use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{fedavg, ClientParams};
use super::client::{ClientState, ClientUpdate, Task};
use super::payload::{decode_payload, encode_payload, optimizer_from_archive, optimizer_to_archive};
use super::{derive_seed, FederationError, FlConfig, STREAM_ANNOTATE};
use crate::data::ClientShard;
use crate::model::{ArchiveKind, MicroMlm, TensorArchive};
use crate::numerics::{Optimizer, ParamStore};
use crate::prompting::{hard_labels, predict, PatternWeight, Prompted};
use crate::semisup::{
    annotate_round, gate, soft_label_from_scores, AnnotationLedger, AnnotationOutcome, AnnotationPolicy,
    AnnotationRecord, Example,
};

/// Global state held by the server between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    /// Trainable parameters produced by the last FedAvg (adapters in LP
    /// mode). The frozen base is never part of this.
    pub global: ParamStore,
    /// Rounds completed so far.
    pub round: usize,
    pub total_rounds: usize,
    /// Validation accuracy of each pattern under the current global model.
    pub weights: Vec<PatternWeight>,
    /// Ensemble validation accuracy of the current global model.
    pub val_accuracy: f64,
    pub history: Vec<RoundMetrics>,
}

/// One client's row of a round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client: usize,
    pub train_loss: Option<f64>,
    pub bytes_up: usize,
    pub bytes_down: usize,
    /// `|T_k|` at upload time, which is also the FedAvg weight `n_k`.
    pub labeled_count: usize,
    pub unlabeled_count: usize,
    pub annotated: usize,
}

/// Everything recorded about one global round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Whether the accuracy gate was open when this round annotated.
    pub gate_open: bool,
    pub val_accuracy: f64,
    pub pattern_accuracies: Vec<PatternWeight>,
    pub clients: Vec<ClientMetrics>,
}

/// Metrics history as CSV, one row per round and client.
pub fn metrics_csv(history: &[RoundMetrics], pattern_ids: &[String]) -> String {
    let mut out = String::from("round,client,train_loss,val_acc");
    for id in pattern_ids {
        let _ = write!(out, ",a_{id}");
    }
    out.push_str(",bytes_up,bytes_down,labeled_count,unlabeled_count\n");
    for r in history {
        for c in &r.clients {
            let loss = c.train_loss.map(|l| l.to_string()).unwrap_or_default();
            let _ = write!(out, "{},{},{},{}", r.round, c.client, loss, r.val_accuracy);
            for id in pattern_ids {
                let a = r
                    .pattern_accuracies
                    .iter()
                    .find(|w| &w.pattern == id)
                    .map(|w| w.accuracy.to_string())
                    .unwrap_or_default();
                let _ = write!(out, ",{a}");
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                c.bytes_up, c.bytes_down, c.labeled_count, c.unlabeled_count
            );
        }
    }
    out
}

/// Serializable part of a round checkpoint. Tensors are stored beside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationState {
    pub round: usize,
    pub total_rounds: usize,
    pub weights: Vec<PatternWeight>,
    pub val_accuracy: f64,
    pub history: Vec<RoundMetrics>,
    pub clients: Vec<ClientSnapshot>,
    pub audit: Vec<AnnotationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientSnapshot {
    pub id: usize,
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub ledger: AnnotationLedger,
}

/// Accuracy of a model on a labeled set: per pattern and for the ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub pattern_accuracies: Vec<PatternWeight>,
    /// Accuracy of the ensemble weighted by `pattern_accuracies`.
    pub ensemble_accuracy: f64,
}

const STATE_FILE: &str = "state.json";
const GLOBAL_FILE: &str = "global.lpfl";

fn optimizer_file(client: usize) -> String {
    format!("optimizer-{client}.lpfl")
}

/// A complete federated (or centralized) run: server, clients, frozen base
/// model, validation set and annotation audit trail.
pub struct Simulation {
    config: FlConfig,
    policy: AnnotationPolicy,
    task: Task,
    base: MicroMlm,
    server: ServerState,
    clients: Vec<ClientState>,
    validation: Vec<Vec<Prompted>>,
    validation_labels: Vec<usize>,
    audit: Vec<AnnotationRecord>,
    pool: rayon::ThreadPool,
}

impl Simulation {
    /// Sets up clients from `shards` and evaluates the initial global model
    /// so the first round's gate and ensemble weights are defined.
    pub fn new(
        config: FlConfig,
        policy: AnnotationPolicy,
        task: Task,
        base: MicroMlm,
        shards: Vec<ClientShard>,
        validation: &[Example],
        parallel_clients: usize,
    ) -> Result<Self, FederationError> {
        config.check()?;
        if let Some(v) = policy.violations().into_iter().next() {
            return Err(FederationError::Config(v.to_string()));
        }
        if shards.len() != config.clients {
            return Err(FederationError::Config(format!(
                "{} shards for {} clients",
                shards.len(),
                config.clients
            )));
        }
        let base = base.with_mode(config.arm.mode());
        let global = base.params().subset(&base.trainable_ids(config.arm.mode().into()));
        let validation_labels = hard_labels(validation)?;
        let validation = validation
            .iter()
            .map(|e| task.prompts(&e.text))
            .collect::<Result<Vec<_>, _>>()?;
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(k, s)| ClientState::new(k, s, Optimizer::new(config.optimizer)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel_clients.max(1))
            .build()
            .map_err(|e| FederationError::Config(format!("thread pool: {e}")))?;
        let mut sim = Self {
            server: ServerState {
                global,
                round: 0,
                total_rounds: config.rounds,
                weights: Vec::new(),
                val_accuracy: 0.0,
                history: Vec::new(),
            },
            config,
            policy,
            task,
            base,
            clients,
            validation,
            validation_labels,
            audit: Vec::new(),
            pool,
        };
        let eval = sim.evaluate_prompts(&sim.global_model()?, &sim.validation, &sim.validation_labels)?;
        sim.server.weights = eval.pattern_accuracies;
        sim.server.val_accuracy = eval.ensemble_accuracy;
        Ok(sim)
    }

    pub fn config(&self) -> &FlConfig {
        &self.config
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn history(&self) -> &[RoundMetrics] {
        &self.server.history
    }

    pub fn audit(&self) -> &[AnnotationRecord] {
        &self.audit
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    /// The frozen base model the run started from.
    pub fn base(&self) -> &MicroMlm {
        &self.base
    }

    pub fn pattern_ids(&self) -> Vec<String> {
        self.task.patterns.iter().map(|p| p.id.clone()).collect()
    }

    pub fn finished(&self) -> bool {
        self.server.round >= self.server.total_rounds
    }

    /// Base model with the current global trainable parameters.
    pub fn global_model(&self) -> Result<MicroMlm, FederationError> {
        let mut m = self.base.clone();
        m.params_mut().overwrite_from(&self.server.global)?;
        Ok(m)
    }

    fn evaluate_prompts(
        &self,
        model: &MicroMlm,
        prompts: &[Vec<Prompted>],
        labels: &[usize],
    ) -> Result<Evaluation, FederationError> {
        if prompts.is_empty() {
            return Err(crate::prompting::PromptError::EmptyValidation.into());
        }
        let scores: Vec<Vec<Vec<f64>>> = self.pool.install(|| {
            prompts
                .par_iter()
                .map(|p| self.task.scores(model, p))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let n = prompts.len() as f64;
        let pattern_accuracies: Vec<PatternWeight> = self
            .task
            .patterns
            .iter()
            .enumerate()
            .map(|(p, pat)| {
                let correct = scores.iter().zip(labels).filter(|(s, &l)| predict(&s[p]) == l).count();
                PatternWeight {
                    pattern: pat.id.clone(),
                    accuracy: correct as f64 / n,
                }
            })
            .collect();
        let weights = ensemble_weights(&pattern_accuracies);
        let mut correct = 0usize;
        for (s, &l) in scores.iter().zip(labels) {
            let dist = soft_label_from_scores(s, &weights, self.policy.ensemble)?;
            if predict(&dist) == l {
                correct += 1;
            }
        }
        Ok(Evaluation {
            pattern_accuracies,
            ensemble_accuracy: correct as f64 / n,
        })
    }

    /// Per-pattern and ensemble accuracy of the current global model on
    /// `examples`, which must carry hard labels.
    pub fn evaluate(&self, examples: &[Example]) -> Result<Evaluation, FederationError> {
        let labels = hard_labels(examples)?;
        let prompts = examples
            .iter()
            .map(|e| self.task.prompts(&e.text))
            .collect::<Result<Vec<_>, _>>()?;
        self.evaluate_prompts(&self.global_model()?, &prompts, &labels)
    }

    /// Ensemble accuracy on `examples` with the current global model, the
    /// pattern weights being the validation accuracies of the last round.
    pub fn test_accuracy(&self, examples: &[Example]) -> Result<f64, FederationError> {
        let labels = hard_labels(examples)?;
        let model = self.global_model()?;
        let weights = ensemble_weights(&self.server.weights);
        let scores: Vec<Vec<Vec<f64>>> = self.pool.install(|| {
            examples
                .par_iter()
                .map(|e| self.task.scores_for_text(&model, &e.text))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let mut correct = 0usize;
        for (s, &l) in scores.iter().zip(&labels) {
            if predict(&soft_label_from_scores(s, &weights, self.policy.ensemble)?) == l {
                correct += 1;
            }
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    /// One global round: every client annotates (when due and the gate is
    /// open), trains locally and uploads; the server averages, broadcasts
    /// and re-evaluates.
    pub fn run_round(&mut self) -> Result<&RoundMetrics, FederationError> {
        let g = self.server.round + 1;
        if self.finished() {
            return Err(FederationError::Config(format!(
                "all {} rounds already completed",
                self.server.total_rounds
            )));
        }
        let snapshot = self.global_model().map_err(|e| e.in_round(g, None))?;
        let gate_open = gate(self.server.val_accuracy, &self.policy);
        let weights: Vec<f64> = self.server.weights.iter().map(|w| w.accuracy).collect();
        let mode = self.config.arm.mode();

        let (config, policy, task, total) = (&self.config, &self.policy, &self.task, self.server.total_rounds);
        let results: Vec<Result<(AnnotationOutcome, ClientUpdate), FederationError>> = self.pool.install(|| {
            self.clients
                .par_iter_mut()
                .map(|c| {
                    let seed = derive_seed(config.seed, &[STREAM_ANNOTATE, c.id as u64, g as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let outcome = annotate_round(
                        &mut c.labeled,
                        &mut c.unlabeled,
                        &mut c.ledger,
                        g,
                        total,
                        gate_open,
                        policy,
                        &mut rng,
                        |e| {
                            let scores = task.scores_for_text(&snapshot, &e.text)?;
                            soft_label_from_scores(&scores, &weights, policy.ensemble)
                        },
                    )
                    .map_err(|e| FederationError::from(e).in_round(g, Some(c.id)))?;
                    let update = c
                        .client_update(&snapshot, task, config, g)
                        .map_err(|e| e.in_round(g, Some(c.id)))?;
                    Ok((outcome, update))
                })
                .collect()
        });

        let mut uploads = Vec::with_capacity(self.clients.len());
        let mut rows = Vec::with_capacity(self.clients.len());
        for (c, res) in self.clients.iter().zip(results) {
            let (outcome, update) = res?;
            let wire = encode_payload(&update.params, mode).map_err(|e| e.in_round(g, Some(c.id)))?;
            let received = decode_payload(&wire, mode).map_err(|e| e.in_round(g, Some(c.id)))?;
            let annotated = match outcome {
                AnnotationOutcome::Annotated { ids } => {
                    let fresh = &c.labeled[c.labeled.len() - ids.len()..];
                    for e in fresh {
                        let distribution = e.target(self.task.num_labels()).unwrap_or_default();
                        self.audit.push(AnnotationRecord {
                            round: g,
                            client: c.id,
                            example: e.id,
                            distribution,
                            weights: self.server.weights.clone(),
                            hidden_label: None,
                        });
                    }
                    ids.len()
                }
                _ => 0,
            };
            rows.push(ClientMetrics {
                client: c.id,
                train_loss: update.train_loss,
                bytes_up: received.scalar_count() * 8,
                bytes_down: 0,
                labeled_count: c.labeled.len(),
                unlabeled_count: c.unlabeled.len(),
                annotated,
            });
            uploads.push(ClientParams {
                params: received,
                n_k: update.n_k,
            });
        }

        let averaged = fedavg(&uploads).map_err(|e| e.in_round(g, None))?;
        let wire = encode_payload(&averaged, mode).map_err(|e| e.in_round(g, None))?;
        let broadcast = decode_payload(&wire, mode).map_err(|e| e.in_round(g, None))?;
        for r in &mut rows {
            r.bytes_down = broadcast.scalar_count() * 8;
        }
        self.server.global = broadcast;

        let model = self.global_model().map_err(|e| e.in_round(g, None))?;
        let eval = self
            .evaluate_prompts(&model, &self.validation, &self.validation_labels)
            .map_err(|e| e.in_round(g, None))?;
        self.server.weights = eval.pattern_accuracies.clone();
        self.server.val_accuracy = eval.ensemble_accuracy;
        self.server.round = g;
        self.server.history.push(RoundMetrics {
            round: g,
            gate_open,
            val_accuracy: eval.ensemble_accuracy,
            pattern_accuracies: eval.pattern_accuracies,
            clients: rows,
        });
        log::info!(
            "round {g}/{}: val acc {:.4}, gate {}",
            self.server.total_rounds,
            self.server.val_accuracy,
            if gate_open { "open" } else { "closed" }
        );
        Ok(self.server.history.last().expect("just pushed"))
    }

    /// Runs the remaining rounds.
    pub fn run(&mut self) -> Result<(), FederationError> {
        while !self.finished() {
            self.run_round()?;
        }
        Ok(())
    }

    /// Writes a round-boundary checkpoint into `dir`.
    pub fn save_state(&self, dir: &Path) -> Result<(), FederationError> {
        fs::create_dir_all(dir).map_err(|e| FederationError::State(format!("{}: {e}", dir.display())))?;
        let state = SimulationState {
            round: self.server.round,
            total_rounds: self.server.total_rounds,
            weights: self.server.weights.clone(),
            val_accuracy: self.server.val_accuracy,
            history: self.server.history.clone(),
            clients: self
                .clients
                .iter()
                .map(|c| ClientSnapshot {
                    id: c.id,
                    labeled: c.labeled.clone(),
                    unlabeled: c.unlabeled.clone(),
                    ledger: c.ledger.clone(),
                })
                .collect(),
            audit: self.audit.clone(),
        };
        let json = serde_json::to_vec(&state).map_err(|e| FederationError::State(e.to_string()))?;
        write_file(&dir.join(STATE_FILE), &json)?;
        let global = TensorArchive::from_store(
            ArchiveKind::Payload,
            serde_json::json!({ "format": "lpfl-payload", "mode": self.config.arm.mode() }),
            &self.server.global,
        );
        write_file(&dir.join(GLOBAL_FILE), &global.encode())?;
        for c in &self.clients {
            write_file(
                &dir.join(optimizer_file(c.id)),
                &optimizer_to_archive(&c.optimizer).encode(),
            )?;
        }
        Ok(())
    }

    /// Restores a checkpoint written by [`Simulation::save_state`] into a
    /// simulation freshly built with the same inputs.
    pub fn load_state(&mut self, dir: &Path) -> Result<(), FederationError> {
        let json = read_file(&dir.join(STATE_FILE))?;
        let state: SimulationState =
            serde_json::from_slice(&json).map_err(|e| FederationError::State(e.to_string()))?;
        if state.total_rounds != self.server.total_rounds || state.clients.len() != self.clients.len() {
            return Err(FederationError::State(
                "checkpoint does not match this configuration".into(),
            ));
        }
        let global = decode_payload(&read_file(&dir.join(GLOBAL_FILE))?, self.config.arm.mode())?;
        let mut check = self.base.clone();
        check.params_mut().overwrite_from(&global)?;
        for (c, snap) in self.clients.iter_mut().zip(state.clients) {
            if c.id != snap.id {
                return Err(FederationError::State(format!("client {} out of order", snap.id)));
            }
            let archive = TensorArchive::decode(&read_file(&dir.join(optimizer_file(c.id)))?)?;
            *c = ClientState::new(
                snap.id,
                ClientShard {
                    labeled: snap.labeled,
                    unlabeled: snap.unlabeled,
                },
                optimizer_from_archive(&archive)?,
            );
            c.ledger = snap.ledger;
        }
        self.server = ServerState {
            global,
            round: state.round,
            total_rounds: state.total_rounds,
            weights: state.weights,
            val_accuracy: state.val_accuracy,
            history: state.history,
        };
        self.audit = state.audit;
        Ok(())
    }
}

/// Ensemble weights from pattern accuracies; uniform when all are zero so
/// that evaluation stays defined.
fn ensemble_weights(acc: &[PatternWeight]) -> Vec<f64> {
    if acc.iter().all(|w| w.accuracy == 0.0) {
        vec![1.0; acc.len()]
    } else {
        acc.iter().map(|w| w.accuracy).collect()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FederationError> {
    fs::write(path, bytes).map_err(|e| FederationError::State(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>, FederationError> {
    fs::read(path).map_err(|e| FederationError::State(format!("{}: {e}", path.display())))
}

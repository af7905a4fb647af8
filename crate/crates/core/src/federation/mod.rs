//! Simulated clients, local training, FedAvg over trainable parameters, the
//! global round loop and communication accounting.

mod aggregate;
mod client;
mod payload;
mod simulation;

pub use aggregate::{fedavg, fedavg_reference, product_average, ClientParams};
pub use client::{ClientState, ClientUpdate, Task};
pub use payload::{comm_cost, decode_payload, encode_payload, optimizer_from_archive, optimizer_to_archive, CommCost};
pub use simulation::{
    metrics_csv, ClientMetrics, ClientSnapshot, Evaluation, RoundMetrics, ServerState, Simulation, SimulationState,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, TrainMode, Violation};
use crate::numerics::{NumericsError, OptimizerKind};
use crate::prompting::PromptError;
use crate::semisup::SemisupError;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error("no client updates to aggregate")]
    NoUpdates,
    #[error("client update {index} has n_k = 0")]
    ZeroWeight { index: usize },
    #[error("client updates disagree on parameter {0}")]
    ParamMismatch(String),
    #[error("client {0} has an empty labeled set")]
    EmptyLabeledSet(usize),
    #[error("payload carries frozen base tensor {0}")]
    BaseTensorInPayload(String),
    #[error("payload: {0}")]
    Payload(String),
    #[error("round checkpoint: {0}")]
    State(String),
    #[error("round {round}, client {client:?}: {source}")]
    InRound {
        round: usize,
        client: Option<usize>,
        #[source]
        source: Box<FederationError>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Semisup(#[from] SemisupError),
}

impl FederationError {
    /// Attaches round and client context.
    pub fn in_round(self, round: usize, client: Option<usize>) -> Self {
        match self {
            e @ FederationError::InRound { .. } => e,
            e => FederationError::InRound {
                round,
                client,
                source: Box::new(e),
            },
        }
    }
}

/// The four ablation arms: adapters or all weights, federated or centralized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    LpFl,
    FpFl,
    LpCt,
    FpCt,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::LpFl, Arm::FpFl, Arm::LpCt, Arm::FpCt];

    pub fn mode(self) -> TrainMode {
        match self {
            Arm::LpFl | Arm::LpCt => TrainMode::Lp,
            Arm::FpFl | Arm::FpCt => TrainMode::Fp,
        }
    }

    pub fn centralized(self) -> bool {
        matches!(self, Arm::LpCt | Arm::FpCt)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::LpFl => "lp-fl",
            Arm::FpFl => "fp-fl",
            Arm::LpCt => "lp-ct",
            Arm::FpCt => "fp-ct",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Arm::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Protocol settings shared by every client and the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_five")]
    pub rounds: usize,
    #[serde(default = "default_five")]
    pub local_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_arm")]
    pub arm: Arm,
    #[serde(default = "default_fraction")]
    pub labeled_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_clients() -> usize {
    2
}
fn default_five() -> usize {
    5
}
fn default_batch() -> usize {
    8
}
fn default_arm() -> Arm {
    Arm::LpFl
}
fn default_fraction() -> f64 {
    0.01
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            clients: default_clients(),
            rounds: default_five(),
            local_epochs: default_five(),
            batch_size: default_batch(),
            optimizer: OptimizerKind::default(),
            arm: default_arm(),
            labeled_fraction: default_fraction(),
            seed: 0,
        }
    }
}

impl FlConfig {
    /// Field-level invariant violations. Empty iff the config is usable.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.clients == 0 {
            out.push(Violation::new("federation.clients", "must be positive"));
        }
        if self.arm.centralized() && self.clients != 1 {
            out.push(Violation::new(
                "federation.clients",
                format!(
                    "centralized arm {} requires exactly 1 client, got {}",
                    self.arm, self.clients
                ),
            ));
        }
        if self.rounds == 0 {
            out.push(Violation::new("federation.rounds", "must be positive"));
        }
        if self.batch_size == 0 {
            out.push(Violation::new("federation.batch_size", "must be positive"));
        }
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            out.push(Violation::new(
                "federation.optimizer.lr",
                format!("must be positive, got {lr}"),
            ));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            out.push(Violation::new(
                "federation.labeled_fraction",
                format!("must lie in (0, 1), got {}", self.labeled_fraction),
            ));
        }
        out
    }

    pub fn check(&self) -> Result<(), FederationError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(FederationError::Config(
                v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            ))
        }
    }
}

/// Stream identifiers mixed into derived seeds.
pub(crate) const STREAM_SHUFFLE: u64 = 1;
pub(crate) const STREAM_ANNOTATE: u64 = 2;

/// Seed for one random stream, derived from the run seed and a path of
/// integers (stream, client, round, epoch ...) with the SplitMix64 finalizer.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let mut h = mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    for &p in path {
        h = mix(h ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

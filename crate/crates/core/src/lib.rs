//! Low-parameter federated prompt tuning.
//!
//! A small masked language model is pretrained in-process, wrapped with LoRA
//! adapters, and fine-tuned across simulated clients with cloze-style
//! patterns and verbalizers. Clients exchange only adapter weights; the server
//! averages them with FedAvg, and each round clients soft-label part of their
//! unlabeled pool with the accuracy-weighted pattern ensemble.

pub mod data;
pub mod federation;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod prompting;
pub mod semisup;

//! Synthetic binary sentiment corpus with a known Bayes rate.
//!
//! Each document is a shuffled bag of filler words plus one or more signal
//! words from its true label's signal set. With probability `noise_rate` the
//! stored label is flipped, so the best achievable accuracy is
//! `1 − noise_rate`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::semisup::{Example, ExampleId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    /// Distinct word types: fillers plus both signal sets.
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_signal")]
    pub signal_words_per_label: usize,
    #[serde(default = "default_noise")]
    pub noise_rate: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_min_filler")]
    pub min_filler: usize,
    #[serde(default = "default_max_filler")]
    pub max_filler: usize,
    #[serde(default = "default_min_signal")]
    pub min_signal: usize,
    #[serde(default = "default_max_signal")]
    pub max_signal: usize,
}

fn default_n() -> usize {
    5000
}
fn default_vocab() -> usize {
    2000
}
fn default_signal() -> usize {
    20
}
fn default_noise() -> f64 {
    0.05
}
fn default_seed() -> u64 {
    1
}
fn default_min_filler() -> usize {
    3
}
fn default_max_filler() -> usize {
    6
}
fn default_min_signal() -> usize {
    1
}
fn default_max_signal() -> usize {
    2
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::new(
            default_n(),
            default_vocab(),
            default_signal(),
            default_noise(),
            default_seed(),
        )
    }
}

impl SynthConfig {
    pub fn new(n: usize, vocab_size: usize, signal_words_per_label: usize, noise_rate: f64, seed: u64) -> Self {
        Self {
            n,
            vocab_size,
            signal_words_per_label,
            noise_rate,
            seed,
            min_filler: default_min_filler(),
            max_filler: default_max_filler(),
            min_signal: default_min_signal(),
            max_signal: default_max_signal(),
        }
    }

    pub fn filler_count(&self) -> usize {
        self.vocab_size.saturating_sub(2 * self.signal_words_per_label)
    }
}

/// Signal word `i` of `label` (label 0 is negative, label 1 positive).
pub fn signal_word(label: usize, i: usize) -> String {
    match label {
        0 => format!("neg{i}"),
        _ => format!("pos{i}"),
    }
}

pub fn filler_word(i: usize) -> String {
    format!("w{i}")
}

/// Signal sets indexed by label.
pub fn signal_sets(signal_words_per_label: usize) -> [Vec<String>; 2] {
    [0, 1].map(|l| (0..signal_words_per_label).map(|i| signal_word(l, i)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub examples: Vec<Example>,
    /// Label before noise, per example.
    pub clean_labels: Vec<usize>,
}

impl SynthCorpus {
    pub fn flip_fraction(&self) -> f64 {
        let flips = self
            .examples
            .iter()
            .zip(&self.clean_labels)
            .filter(|(e, &c)| e.hard_label() != Some(c))
            .count();
        flips as f64 / self.examples.len() as f64
    }
}

pub fn synth_sentiment(
    n: usize,
    vocab_size: usize,
    signal_words_per_label: usize,
    noise_rate: f64,
    seed: u64,
) -> Result<Vec<Example>, DataError> {
    Ok(synth_corpus(&SynthConfig::new(
        n,
        vocab_size,
        signal_words_per_label,
        noise_rate,
        seed,
    ))?
    .examples)
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, DataError> {
    let bad = |m: &str| Err(DataError::InvalidConfig(format!("synthetic corpus: {m}")));
    if cfg.n == 0 {
        return bad("n must be positive");
    }
    if cfg.signal_words_per_label == 0 {
        return bad("signal_words_per_label must be positive");
    }
    if cfg.filler_count() == 0 {
        return bad("vocab_size must exceed the two signal sets");
    }
    if !(0.0..0.5).contains(&cfg.noise_rate) {
        return bad("noise_rate must lie in [0, 0.5)");
    }
    if cfg.min_signal == 0 || cfg.min_signal > cfg.max_signal || cfg.min_filler > cfg.max_filler {
        return bad("length ranges must be non-empty with at least one signal word");
    }
    let signals = signal_sets(cfg.signal_words_per_label);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut examples = Vec::with_capacity(cfg.n);
    let mut clean_labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let label = rng.gen_range(0..2usize);
        let n_fill = rng.gen_range(cfg.min_filler..=cfg.max_filler);
        let n_sig = rng.gen_range(cfg.min_signal..=cfg.max_signal);
        let mut words: Vec<String> = (0..n_fill)
            .map(|_| filler_word(rng.gen_range(0..cfg.filler_count())))
            .collect();
        words.extend((0..n_sig).map(|_| signals[label].choose(&mut rng).expect("non-empty").clone()));
        words.shuffle(&mut rng);
        let observed = if rng.gen::<f64>() < cfg.noise_rate {
            1 - label
        } else {
            label
        };
        examples.push(Example::hard(ExampleId(i as u64), words.join(" "), observed));
        clean_labels.push(label);
    }
    Ok(SynthCorpus { examples, clean_labels })
}

/// Unlabeled background text for pretraining.
///
/// Documents follow `cfg` (word ranges and signal sets) with a fresh seed,
/// no label noise and no labels. With dense settings (few fillers, several
/// signal words) the text teaches which signal words share a polarity, the
/// way general text teaches that sentiment words cluster. No verbalizer word
/// appears, so the mapping from polarity to label words is left to
/// fine-tuning.
pub fn synth_background(cfg: &SynthConfig, docs: usize, seed: u64) -> Result<Vec<String>, DataError> {
    let cfg = SynthConfig {
        n: docs,
        noise_rate: 0.0,
        seed,
        ..cfg.clone()
    };
    Ok(synth_corpus(&cfg)?.examples.into_iter().map(|e| e.text).collect())
}

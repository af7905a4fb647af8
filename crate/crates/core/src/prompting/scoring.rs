use std::sync::Arc;

use super::pattern::Pattern;
use super::verbalizer::ResolvedVerbalizer;
use super::PromptError;
use crate::data::Tokenizer;
use crate::model::{MicroMlm, Trainable};
use crate::numerics::{Graph, Tensor, Var};
use crate::semisup::Example;

/// A pattern applied to one text: token ids and the mask position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompted {
    pub ids: Vec<usize>,
    pub mask_pos: usize,
}

impl Prompted {
    pub fn new(pattern: &Pattern, text: &str, tokenizer: &Tokenizer, max_len: usize) -> Result<Self, PromptError> {
        let (ids, mask_pos) = pattern.apply(text, tokenizer, max_len)?;
        Ok(Self { ids, mask_pos })
    }
}

/// Applies every pattern to every text once. Indexed `[pattern][text]`.
pub fn encode_all<'a>(
    patterns: &[Pattern],
    texts: impl IntoIterator<Item = &'a str>,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Result<Vec<Vec<Prompted>>, PromptError> {
    let encoded: Vec<Vec<usize>> = texts.into_iter().map(|t| tokenizer.encode(t)).collect();
    patterns
        .iter()
        .map(|p| {
            encoded
                .iter()
                .map(|ids| {
                    let (ids, mask_pos) = p.apply_ids(ids, tokenizer, max_len)?;
                    Ok(Prompted { ids, mask_pos })
                })
                .collect()
        })
        .collect()
}

/// Label scores `[1 × |L|]` on a tape: for each label, the sum of the mask
/// logits of its verbalizer words.
pub fn label_scores_on_tape(
    g: &mut Graph,
    model: &MicroMlm,
    prompt: &Prompted,
    verbalizer: &ResolvedVerbalizer,
    which: Trainable,
) -> Result<Var, PromptError> {
    let logits = model.word_logits(g, &prompt.ids, prompt.mask_pos, &verbalizer.word_ids, which)?;
    Ok(g.group_sum(logits, &verbalizer.groups)?)
}

/// Label scores for an already applied pattern, shape `[|L|]`.
pub fn label_scores_prompted(
    model: &MicroMlm,
    prompt: &Prompted,
    verbalizer: &ResolvedVerbalizer,
) -> Result<Tensor, PromptError> {
    let mut g = Graph::new();
    let v = label_scores_on_tape(&mut g, model, prompt, verbalizer, Trainable::Nothing)?;
    Ok(g.value(v).clone().reshape(vec![verbalizer.num_labels()])?)
}

/// Label scores `s_P(l|x)` for a raw text, shape `[|L|]`.
pub fn label_scores(
    model: &MicroMlm,
    pattern: &Pattern,
    verbalizer: &ResolvedVerbalizer,
    tokenizer: &Tokenizer,
    text: &str,
) -> Result<Tensor, PromptError> {
    let prompt = Prompted::new(pattern, text, tokenizer, model.config().max_len)?;
    label_scores_prompted(model, &prompt, verbalizer)
}

/// Mean soft cross-entropy over a batch of prompted examples, on a tape.
pub fn pattern_loss_on_tape(
    g: &mut Graph,
    model: &MicroMlm,
    batch: &[(&Prompted, &[f64])],
    verbalizer: &ResolvedVerbalizer,
    which: Trainable,
) -> Result<Var, PromptError> {
    if batch.is_empty() {
        return Err(PromptError::EmptyBatch);
    }
    let n_labels = verbalizer.num_labels();
    let mut terms = Vec::with_capacity(batch.len());
    for (prompt, target) in batch {
        if target.len() != n_labels {
            return Err(PromptError::LabelCount {
                expected: n_labels,
                found: target.len(),
            });
        }
        let scores = label_scores_on_tape(g, model, prompt, verbalizer, which)?;
        let target = Arc::new(Tensor::new(vec![1, n_labels], target.to_vec())?);
        terms.push(g.soft_cross_entropy(scores, target)?);
    }
    Ok(g.mean(&terms)?)
}

/// Mean over the batch of the cross-entropy between label scores and the
/// target distributions.
pub fn pattern_loss(
    model: &MicroMlm,
    pattern: &Pattern,
    verbalizer: &ResolvedVerbalizer,
    tokenizer: &Tokenizer,
    batch: &[(&str, Vec<f64>)],
) -> Result<f64, PromptError> {
    let prompts = batch
        .iter()
        .map(|(text, _)| Prompted::new(pattern, text, tokenizer, model.config().max_len))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(&Prompted, &[f64])> = prompts.iter().zip(batch).map(|(p, (_, t))| (p, t.as_slice())).collect();
    let mut g = Graph::new();
    let loss = pattern_loss_on_tape(&mut g, model, &pairs, verbalizer, Trainable::Nothing)?;
    Ok(g.value(loss).item())
}

/// Index of the largest score; ties go to the lowest index.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of prompted examples whose predicted label equals `labels[i]`.
pub fn accuracy_prompted(
    model: &MicroMlm,
    prompts: &[Prompted],
    labels: &[usize],
    verbalizer: &ResolvedVerbalizer,
) -> Result<f64, PromptError> {
    if prompts.is_empty() {
        return Err(PromptError::EmptyValidation);
    }
    let mut correct = 0usize;
    for (p, &l) in prompts.iter().zip(labels) {
        let scores = label_scores_prompted(model, p, verbalizer)?;
        if predict(scores.data()) == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / prompts.len() as f64)
}

/// Validation accuracy `a_P` of one pattern.
pub fn pattern_accuracy(
    model: &MicroMlm,
    pattern: &Pattern,
    verbalizer: &ResolvedVerbalizer,
    tokenizer: &Tokenizer,
    val: &[Example],
) -> Result<f64, PromptError> {
    let labels = hard_labels(val)?;
    let prompts = val
        .iter()
        .map(|e| Prompted::new(pattern, &e.text, tokenizer, model.config().max_len))
        .collect::<Result<Vec<_>, _>>()?;
    accuracy_prompted(model, &prompts, &labels, verbalizer)
}

/// Hard labels of a validation set; every example must carry one.
pub fn hard_labels(val: &[Example]) -> Result<Vec<usize>, PromptError> {
    if val.is_empty() {
        return Err(PromptError::EmptyValidation);
    }
    val.iter()
        .map(|e| e.hard_label().ok_or(PromptError::MissingLabel(e.id.0)))
        .collect()
}

/// A pattern's validation accuracy, used as its ensemble weight.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PatternWeight {
    pub pattern: String,
    pub accuracy: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::ops;
    use crate::prompting::PromptSet;
    use crate::semisup::ExampleId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        model: MicroMlm,
        set: PromptSet,
        verb: ResolvedVerbalizer,
        tok: Tokenizer,
    }

    fn fixture(seed: u64) -> Fixture {
        let set = PromptSet::imdb();
        let texts = ["a fine film about a dog", "the plot was thin and long"];
        let tok = Tokenizer::build(texts, 120, &set.forced_words()).unwrap();
        let mut cfg = ModelConfig::new(tok.len());
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 32;
        cfg.lora_rank = 2;
        let mut model = MicroMlm::init(cfg, seed).unwrap();
        // Non-zero B so the adapter path is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let ids: Vec<_> = model.adapter_params().ids().cloned().collect();
        for id in ids {
            let t = model.params_mut().get_mut(&id).unwrap();
            for x in t.data_mut() {
                *x = rng.gen_range(-0.3..0.3);
            }
        }
        let verb = set.verbalizer.resolve(&tok).unwrap();
        Fixture { model, set, verb, tok }
    }

    fn brute_scores(f: &Fixture, p: &Pattern, text: &str) -> Vec<f64> {
        let (ids, mask) = p.apply(text, &f.tok, f.model.config().max_len).unwrap();
        let logits = f.model.forward_mask_logits(&ids, mask).unwrap();
        (0..f.set.verbalizer.num_labels())
            .map(|l| {
                let mut s = 0.0;
                for w in f.set.verbalizer.words(l) {
                    s += logits.data()[f.tok.id(w).unwrap()];
                }
                s
            })
            .collect()
    }

    #[test]
    fn scores_match_full_vocab_brute_force_exactly() {
        for seed in 0..3 {
            let f = fixture(seed);
            for p in &f.set.patterns {
                for text in ["a fine film", "the dog was long and thin", ""] {
                    let s = label_scores(&f.model, p, &f.verb, &f.tok, text).unwrap();
                    assert_eq!(s.data(), brute_scores(&f, p, text).as_slice());
                }
            }
        }
    }

    #[test]
    fn loss_is_mean_of_brute_force_terms() {
        let f = fixture(4);
        let p = &f.set.patterns[0];
        let batch = vec![("a fine film", vec![0.0, 1.0]), ("thin plot", vec![0.3, 0.7])];
        let loss = pattern_loss(&f.model, p, &f.verb, &f.tok, &batch).unwrap();
        let mut total = 0.0;
        for (text, target) in &batch {
            let s = Tensor::vector(&brute_scores(&f, p, text)).unwrap();
            total += ops::cross_entropy_soft(&s, &Tensor::vector(target).unwrap()).unwrap();
        }
        assert_eq!(loss, total / 2.0);
        assert!(matches!(
            pattern_loss(&f.model, p, &f.verb, &f.tok, &[]),
            Err(PromptError::EmptyBatch)
        ));
    }

    #[test]
    fn equal_logits_give_equal_scores() {
        // Ten words per label with a constant logit c → [10c, 10c].
        let logits = vec![0.7; 20];
        let groups: Vec<Vec<usize>> = vec![(0..10).collect(), (10..20).collect()];
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 20], logits).unwrap());
        let s = g.group_sum(x, &groups).unwrap();
        let s = g.value(s).data().to_vec();
        assert!((s[0] - 7.0).abs() < 1e-12 && s[0] == s[1]);
        let p = ops::softmax(&Tensor::vector(&s).unwrap()).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn single_word_difference() {
        let mut logits = vec![0.0; 20];
        logits[10] = 3.0;
        let groups: Vec<Vec<usize>> = vec![(0..10).collect(), (10..20).collect()];
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 20], logits).unwrap());
        let s = g.group_sum(x, &groups).unwrap();
        let s = g.value(s).data();
        assert_eq!(s[1] - s[0], 3.0);
    }

    #[test]
    fn uniform_scores_one_hot_loss_is_ln2() {
        let s = Tensor::vector(&[1.5, 1.5]).unwrap();
        let t = Tensor::vector(&[0.0, 1.0]).unwrap();
        assert!((ops::cross_entropy_soft(&s, &t).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn predict_breaks_ties_low() {
        assert_eq!(predict(&[1.0, 1.0]), 0);
        assert_eq!(predict(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(predict(&[3.0]), 0);
    }

    #[test]
    fn accuracy_counts() {
        let f = fixture(5);
        let p = &f.set.patterns[0];
        let texts = ["a fine film", "a dog", "the plot", "long"];
        let preds: Vec<usize> = texts
            .iter()
            .map(|t| predict(label_scores(&f.model, p, &f.verb, &f.tok, t).unwrap().data()))
            .collect();
        let val = |labels: Vec<usize>| -> Vec<Example> {
            texts
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (t, l))| Example::hard(ExampleId(i as u64), *t, l))
                .collect()
        };
        let acc = |labels| pattern_accuracy(&f.model, p, &f.verb, &f.tok, &val(labels)).unwrap();
        assert_eq!(acc(preds.clone()), 1.0);
        let mut three = preds.clone();
        three[2] = 1 - three[2];
        assert_eq!(acc(three), 0.75);
        assert_eq!(acc(preds.iter().map(|p| 1 - p).collect()), 0.0);
        assert!(matches!(
            pattern_accuracy(&f.model, p, &f.verb, &f.tok, &[]),
            Err(PromptError::EmptyValidation)
        ));
    }

    #[test]
    fn encode_all_matches_per_text_application() {
        let f = fixture(6);
        let texts = ["a fine film", "the plot"];
        let all = encode_all(&f.set.patterns, texts.iter().copied(), &f.tok, 128).unwrap();
        for (pi, p) in f.set.patterns.iter().enumerate() {
            for (ti, t) in texts.iter().enumerate() {
                assert_eq!(all[pi][ti], Prompted::new(p, t, &f.tok, 128).unwrap());
            }
        }
    }
}

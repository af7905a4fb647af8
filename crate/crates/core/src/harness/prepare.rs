use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use super::spec::{DataSource, ExperimentSpec, PretrainCorpus};
use super::HarnessError;
use crate::data::{
    load_corpus, partition, synth_background, synth_corpus, CorpusFormat, DatasetSplit, PartitionConfig, Tokenizer,
};
use crate::federation::Task;
use crate::model::{load_checkpoint, pretrain_base, save_checkpoint, MicroMlm, ModelConfig};
use crate::prompting::PromptSet;
use crate::semisup::Example;

/// Examples as read or generated, before partitioning.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedData {
    pub train: Vec<Example>,
    /// Labeled test corpus given separately, if any.
    pub test: Option<Vec<Example>>,
}

/// Everything a run needs before the first round.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub task: Task,
    /// Pretrained base model with zero-initialized adapters.
    pub base: MicroMlm,
    /// Where the pretrained base is cached.
    pub base_path: PathBuf,
    pub fingerprint: String,
}

pub fn load_examples(spec: &ExperimentSpec, num_labels: usize) -> Result<LoadedData, HarnessError> {
    let train = match spec.data.source {
        DataSource::Synthetic => synth_corpus(&spec.data.synthetic)?.examples,
        DataSource::File => {
            let path = spec
                .data
                .corpus
                .as_ref()
                .ok_or_else(|| HarnessError::Config("data.corpus is required".into()))?;
            load_corpus(path, CorpusFormat::JsonLines, num_labels)?
        }
    };
    let test = match &spec.data.test_corpus {
        Some(p) => Some(load_corpus(p, CorpusFormat::JsonLines, num_labels)?),
        None => None,
    };
    Ok(LoadedData { train, test })
}

/// SHA-256 over the examples, the split sizes and the seed. Runs that differ
/// only in arm, client count or labeled fraction share a fingerprint.
pub fn dataset_fingerprint(data: &LoadedData, spec: &ExperimentSpec) -> String {
    let mut h = Sha256::new();
    let mut feed = |tag: &str, examples: &[Example]| {
        h.update(tag.as_bytes());
        for e in examples {
            let line = serde_json::json!({ "id": e.id, "text": e.text, "label": e.hard_label() });
            h.update(line.to_string().as_bytes());
            h.update(b"\n");
        }
    };
    feed("train", &data.train);
    if let Some(t) = &data.test {
        feed("test", t);
    }
    let test_size = if data.test.is_some() { 0 } else { spec.data.test_size };
    h.update(format!("val={};test={};seed={}", spec.data.val_size, test_size, spec.seed).as_bytes());
    hex::encode(h.finalize())
}

/// Vocabulary over the training split (client pools and validation set);
/// held-out test text does not contribute.
pub fn build_tokenizer(split: &DatasetSplit, prompts: &PromptSet, cap: usize) -> Result<Tokenizer, HarnessError> {
    let texts = split
        .clients
        .iter()
        .flat_map(|c| c.labeled.iter().chain(&c.unlabeled))
        .chain(&split.validation)
        .map(|e| e.text.as_str());
    Ok(Tokenizer::build(texts, cap, &prompts.forced_words())?)
}

/// Loads the pretrained base for `spec` from the cache, or pretrains it and
/// stores it there. The cache key hashes every input of pretraining.
pub fn pretrained_base(
    spec: &ExperimentSpec,
    tokenizer: &Tokenizer,
    split: &DatasetSplit,
) -> Result<(MicroMlm, PathBuf), HarnessError> {
    let config = ModelConfig {
        vocab_size: tokenizer.len(),
        ..spec.model.clone()
    };
    let p = &spec.pretrain;
    let mut key = serde_json::json!({
        "tokenizer": tokenizer,
        "model": config,
        "init_seed": p.init_seed,
        "training": p.training,
        "corpus": p.corpus,
    });
    match p.corpus {
        PretrainCorpus::Background => {
            key["background"] = serde_json::json!({
                "config": p.background_config(&spec.data.synthetic),
                "docs": p.background_docs,
                "seed": p.background_seed,
            });
        }
        PretrainCorpus::Pool => {
            let texts: Vec<&String> = split
                .clients
                .iter()
                .flat_map(|c| c.labeled.iter().chain(&c.unlabeled))
                .map(|e| &e.text)
                .collect();
            key["pool"] = serde_json::json!(hex::encode(Sha256::digest(
                serde_json::to_vec(&texts).expect("texts serialize")
            )));
        }
    }
    let digest = hex::encode(Sha256::digest(key.to_string().as_bytes()));
    let dir = p.cache_dir.clone().unwrap_or_else(|| spec.output.clone());
    let path = dir.join(format!("base-{}.lpfl", &digest[..16]));
    if path.is_file() {
        log::info!("loading pretrained base from {}", path.display());
        let model = load_checkpoint(&path)?;
        if model.config() != &config {
            return Err(HarnessError::Artifact(format!(
                "{}: cached base has a different shape",
                path.display()
            )));
        }
        return Ok((model, path));
    }

    let texts: Vec<String> = match p.corpus {
        PretrainCorpus::Background => synth_background(
            &p.background_config(&spec.data.synthetic),
            p.background_docs,
            p.background_seed,
        )?,
        PretrainCorpus::Pool => split
            .clients
            .iter()
            .flat_map(|c| c.labeled.iter().chain(&c.unlabeled))
            .map(|e| e.text.clone())
            .collect(),
    };
    let corpus: Vec<Vec<usize>> = texts.iter().map(|t| tokenizer.encode(t)).collect();
    let mut model = MicroMlm::init(config, p.init_seed)?;
    log::info!(
        "pretraining base: {} steps on {} documents",
        p.training.steps,
        corpus.len()
    );
    let report = pretrain_base(&mut model, &corpus, &p.training)?;
    if let Some(last) = report.losses.last() {
        log::info!("pretraining done, final batch loss {last:.4}");
    }
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    static WRITES: AtomicUsize = AtomicUsize::new(0);
    let tmp = dir.join(format!(
        ".base-{}.{}-{}.tmp",
        &digest[..16],
        std::process::id(),
        WRITES.fetch_add(1, Ordering::Relaxed)
    ));
    save_checkpoint(&model, &tmp)?;
    std::fs::rename(&tmp, &path).map_err(|e| HarnessError::io(&path, e))?;
    Ok((model, path))
}

/// Loads data, partitions it, builds the vocabulary and task, and obtains the
/// pretrained base.
pub fn prepare(spec: &ExperimentSpec) -> Result<Prepared, HarnessError> {
    let prompts = spec.prompt_set()?;
    let num_labels = prompts.verbalizer.num_labels();
    let data = load_examples(spec, num_labels)?;
    let fingerprint = dataset_fingerprint(&data, spec);
    let test_size = if data.test.is_some() { 0 } else { spec.data.test_size };
    let mut split = partition(
        &data.train,
        &PartitionConfig {
            clients: spec.federation.clients,
            labeled_fraction: spec.federation.labeled_fraction,
            val_size: spec.data.val_size,
            test_size,
            seed: spec.seed,
        },
    )?;
    if let Some(test) = data.test {
        split.test = test;
    }
    let tokenizer = build_tokenizer(&split, &prompts, spec.model.vocab_size)?;
    let (base, base_path) = pretrained_base(spec, &tokenizer, &split)?;
    let verbalizer = prompts.verbalizer.resolve(&tokenizer)?;
    let task = Task::new(prompts.patterns, verbalizer, tokenizer, spec.model.max_len)?;
    Ok(Prepared {
        split,
        task,
        base,
        base_path,
        fingerprint,
    })
}

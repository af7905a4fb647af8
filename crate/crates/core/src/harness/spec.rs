use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{SynthConfig, SPECIAL_TOKENS};
use crate::federation::{Arm, FlConfig};
use crate::model::{ModelConfig, PretrainConfig, Violation};
use crate::prompting::PromptSet;
use crate::semisup::AnnotationPolicy;

/// Where examples come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated in-process from `[data.synthetic]`.
    #[default]
    Synthetic,
    /// Read from a JSON-lines corpus file.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub source: DataSource,
    /// Training corpus for `source = "file"`.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Separate labeled test corpus. Without it `test_size` examples are held
    /// out of the training corpus.
    #[serde(default)]
    pub test_corpus: Option<PathBuf>,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default)]
    pub synthetic: SynthConfig,
}

fn default_val_size() -> usize {
    500
}
fn default_test_size() -> usize {
    1000
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            corpus: None,
            test_corpus: None,
            val_size: default_val_size(),
            test_size: default_test_size(),
            synthetic: SynthConfig::default(),
        }
    }
}

/// Text the base model is pretrained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainCorpus {
    /// Unlabeled synthetic background documents (synthetic data only).
    #[default]
    Background,
    /// The client pools: seed-labeled and unlabeled texts, labels dropped.
    Pool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    #[serde(default)]
    pub corpus: PretrainCorpus,
    #[serde(default = "default_background_docs")]
    pub background_docs: usize,
    #[serde(default = "default_background_seed")]
    pub background_seed: u64,
    #[serde(default)]
    pub background_min_filler: usize,
    #[serde(default = "default_background_max_filler")]
    pub background_max_filler: usize,
    #[serde(default = "default_background_min_signal")]
    pub background_min_signal: usize,
    #[serde(default = "default_background_max_signal")]
    pub background_max_signal: usize,
    /// Seed of the random initialization before pretraining.
    #[serde(default = "default_init_seed")]
    pub init_seed: u64,
    #[serde(default = "default_training")]
    pub training: PretrainConfig,
    /// Directory where pretrained bases are cached by content hash. Defaults
    /// to the run's output directory.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_background_docs() -> usize {
    20000
}
fn default_background_seed() -> u64 {
    99
}
fn default_background_max_filler() -> usize {
    2
}
fn default_background_min_signal() -> usize {
    2
}
fn default_background_max_signal() -> usize {
    4
}
fn default_init_seed() -> u64 {
    3
}
fn default_training() -> PretrainConfig {
    PretrainConfig {
        seed: 5,
        ..PretrainConfig::default()
    }
}

impl Default for PretrainSpec {
    fn default() -> Self {
        Self {
            corpus: PretrainCorpus::Background,
            background_docs: default_background_docs(),
            background_seed: default_background_seed(),
            background_min_filler: 0,
            background_max_filler: default_background_max_filler(),
            background_min_signal: default_background_min_signal(),
            background_max_signal: default_background_max_signal(),
            init_seed: default_init_seed(),
            training: default_training(),
            cache_dir: None,
        }
    }
}

impl PretrainSpec {
    /// Generator settings for background documents derived from the task's
    /// synthetic config.
    pub fn background_config(&self, task: &SynthConfig) -> SynthConfig {
        SynthConfig {
            min_filler: self.background_min_filler,
            max_filler: self.background_max_filler,
            min_signal: self.background_min_signal,
            max_signal: self.background_max_signal,
            ..task.clone()
        }
    }
}

/// A complete experiment: one arm on one dataset split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Drives the split, shuffling and annotation streams. Overrides
    /// `federation.seed`.
    pub seed: u64,
    pub output: PathBuf,
    /// Pattern and verbalizer definition file. The bundled IMDB set is used
    /// when absent.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    #[serde(default)]
    pub federation: FlConfig,
    /// Model shape. `vocab_size` is the vocabulary cap; the model gets the
    /// size of the vocabulary actually built.
    pub model: ModelConfig,
    #[serde(default)]
    pub annotation: AnnotationPolicy,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub pretrain: PretrainSpec,
}

/// Command-line style overrides applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub arm: Option<Arm>,
    pub clients: Option<usize>,
}

impl ExperimentSpec {
    /// Parses a config. Relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut spec: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.resolve_paths(base_dir);
        spec.federation.seed = spec.seed;
        Ok(spec)
    }

    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, dir)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment specs serialize")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        for p in [
            &mut self.prompts,
            &mut self.data.corpus,
            &mut self.data.test_corpus,
            &mut self.pretrain.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        self.federation.seed = self.seed;
        if let Some(out) = &o.output {
            self.output = out.clone();
        }
        if let Some(arm) = o.arm {
            self.federation.arm = arm;
            if arm.centralized() {
                self.federation.clients = 1;
            }
        }
        if let Some(k) = o.clients {
            self.federation.clients = k;
        }
    }

    /// The prompt set this experiment uses.
    pub fn prompt_set(&self) -> Result<PromptSet, HarnessError> {
        match &self.prompts {
            Some(p) => Ok(PromptSet::load(p)?),
            None => Ok(PromptSet::imdb()),
        }
    }
}

/// Every violated invariant of `spec`, each naming its field. Empty iff the
/// spec can be run. Touches the filesystem only to look at referenced paths.
pub fn validate_config(spec: &ExperimentSpec) -> Vec<Violation> {
    let mut v = Vec::new();
    if spec.name.trim().is_empty() {
        v.push(Violation::new("name", "must not be empty"));
    }
    if spec.federation.seed != spec.seed {
        v.push(Violation::new("federation.seed", "must equal the top-level seed"));
    }
    v.extend(spec.federation.violations());
    v.extend(spec.model.validate());
    v.extend(spec.annotation.violations());

    let prompts = match &spec.prompts {
        Some(p) if !p.is_file() => {
            v.push(Violation::new(
                "prompts",
                format!("file {} does not exist", p.display()),
            ));
            None
        }
        _ => match spec.prompt_set() {
            Ok(ps) => Some(ps),
            Err(e) => {
                v.push(Violation::new("prompts", e.to_string()));
                None
            }
        },
    };
    if let Some(ps) = &prompts {
        let required = SPECIAL_TOKENS.len() + ps.forced_words().len();
        if spec.model.vocab_size <= required {
            v.push(Violation::new(
                "model.vocab_size",
                format!("vocabulary cap must exceed the {required} reserved and prompt words"),
            ));
        }
        let longest = ps.patterns.iter().map(|p| p.template_len()).max().unwrap_or(0);
        if spec.model.max_len <= longest {
            v.push(Violation::new(
                "model.max_len",
                format!("must exceed the longest pattern ({longest} tokens)"),
            ));
        }
        if ps.verbalizer.num_labels() != 2 && spec.data.source == DataSource::Synthetic {
            v.push(Violation::new("prompts", "the synthetic corpus has exactly 2 labels"));
        }
    }

    let d = &spec.data;
    match d.source {
        DataSource::File => match &d.corpus {
            None => v.push(Violation::new("data.corpus", "required when data.source = \"file\"")),
            Some(p) if !p.is_file() => v.push(Violation::new(
                "data.corpus",
                format!("file {} does not exist", p.display()),
            )),
            Some(_) => {}
        },
        DataSource::Synthetic => {
            if d.corpus.is_some() {
                v.push(Violation::new("data.corpus", "only used when data.source = \"file\""));
            }
            let s = &d.synthetic;
            let needed = d.val_size + if d.test_corpus.is_none() { d.test_size } else { 0 };
            if s.n <= needed {
                v.push(Violation::new(
                    "data.synthetic.n",
                    format!("must exceed validation plus test size ({needed})"),
                ));
            }
            if !(0.0..0.5).contains(&s.noise_rate) {
                v.push(Violation::new("data.synthetic.noise_rate", "must lie in [0, 0.5)"));
            }
            if s.filler_count() == 0 {
                v.push(Violation::new(
                    "data.synthetic.vocab_size",
                    "must exceed the two signal sets",
                ));
            }
            if s.signal_words_per_label == 0 || s.min_signal == 0 || s.min_signal > s.max_signal {
                v.push(Violation::new(
                    "data.synthetic",
                    "every document needs at least one signal word",
                ));
            }
            if s.min_filler > s.max_filler {
                v.push(Violation::new(
                    "data.synthetic.min_filler",
                    "must not exceed max_filler",
                ));
            }
        }
    }
    if let Some(p) = &d.test_corpus {
        if !p.is_file() {
            v.push(Violation::new(
                "data.test_corpus",
                format!("file {} does not exist", p.display()),
            ));
        }
    } else if d.test_size == 0 {
        v.push(Violation::new(
            "data.test_size",
            "must be positive without a test corpus",
        ));
    }
    if d.val_size == 0 {
        v.push(Violation::new("data.val_size", "must be positive"));
    }

    let p = &spec.pretrain;
    if p.corpus == PretrainCorpus::Background {
        if d.source != DataSource::Synthetic {
            v.push(Violation::new(
                "pretrain.corpus",
                "background text exists only for synthetic data; use \"pool\"",
            ));
        }
        if p.background_docs == 0 {
            v.push(Violation::new("pretrain.background_docs", "must be positive"));
        }
        if p.background_min_signal == 0 || p.background_min_signal > p.background_max_signal {
            v.push(Violation::new(
                "pretrain.background_min_signal",
                "must be positive and not exceed background_max_signal",
            ));
        }
        if p.background_min_filler > p.background_max_filler {
            v.push(Violation::new(
                "pretrain.background_min_filler",
                "must not exceed background_max_filler",
            ));
        }
    }
    let t = &p.training;
    if t.batch_size == 0 {
        v.push(Violation::new("pretrain.training.batch_size", "must be positive"));
    }
    if !(t.mask_prob > 0.0 && t.mask_prob < 1.0) {
        v.push(Violation::new("pretrain.training.mask_prob", "must lie in (0, 1)"));
    }
    if !(t.lr > 0.0 && t.lr.is_finite()) {
        v.push(Violation::new("pretrain.training.lr", "must be positive"));
    }

    if let Some(why) = unwritable(&spec.output) {
        v.push(Violation::new("output", why));
    }
    if let Some(dir) = &p.cache_dir {
        if let Some(why) = unwritable(dir) {
            v.push(Violation::new("pretrain.cache_dir", why));
        }
    }
    v
}

/// Why a directory could not be created or written, if it could not.
fn unwritable(dir: &Path) -> Option<String> {
    let mut probe = dir;
    loop {
        match std::fs::metadata(probe) {
            Ok(m) if !m.is_dir() => return Some(format!("{} is not a directory", probe.display())),
            Ok(m) if m.permissions().readonly() => return Some(format!("{} is read-only", probe.display())),
            Ok(_) => return None,
            Err(_) => match probe.parent() {
                Some(parent) if !parent.as_os_str().is_empty() => probe = parent,
                _ => return None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        name = "t"
        seed = 7
        output = "out"
        [model]
        vocab_size = 2100
    "#;

    fn minimal() -> ExperimentSpec {
        ExperimentSpec::from_toml(MINIMAL, Path::new("/tmp/lpfl-spec-test")).unwrap()
    }

    #[test]
    fn defaults_fill_a_minimal_config() {
        let s = minimal();
        assert_eq!(s.output, PathBuf::from("/tmp/lpfl-spec-test/out"));
        assert_eq!(s.federation.seed, 7);
        assert_eq!(s.federation.rounds, 5);
        assert_eq!(s.data.val_size, 500);
        assert_eq!(s.data.synthetic.n, 5000);
        assert_eq!(s.pretrain.training.steps, 2000);
        assert_eq!(s.model.lora_rank, 8);
        assert!(validate_config(&s).is_empty(), "{:?}", validate_config(&s));
    }

    #[test]
    fn round_trips_through_toml() {
        let s = minimal();
        let back = ExperimentSpec::from_toml(&s.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{MINIMAL}\n[federation]\nclient = 3\n");
        assert!(ExperimentSpec::from_toml(&text, Path::new(".")).is_err());
        let text = MINIMAL.replace("[model]", "[model]\nrnak = 2");
        assert!(ExperimentSpec::from_toml(&text, Path::new(".")).is_err());
    }

    #[test]
    fn rank_constraint_is_named() {
        let mut s = minimal();
        s.model.lora_rank = s.model.d_model;
        let v = validate_config(&s);
        assert_eq!(v.len(), s.model.lora_targets.len(), "{v:?}");
        for x in &v {
            assert_eq!(x.field, "model.lora_rank");
            assert!(x.constraint.contains("min(d, k)"), "{}", x.constraint);
        }
    }

    #[test]
    fn centralized_arm_with_many_clients_is_a_violation() {
        let mut s = minimal();
        s.federation.arm = Arm::FpCt;
        s.federation.clients = 5;
        let v = validate_config(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "federation.clients");
    }

    #[test]
    fn missing_files_are_violations() {
        let mut s = minimal();
        s.data.source = DataSource::File;
        s.data.corpus = Some("/nonexistent/corpus.jsonl".into());
        s.prompts = Some("/nonexistent/prompts.toml".into());
        let fields: Vec<String> = validate_config(&s).into_iter().map(|v| v.field).collect();
        assert!(fields.contains(&"data.corpus".to_string()));
        assert!(fields.contains(&"prompts".to_string()));
        assert!(fields.contains(&"pretrain.corpus".to_string()));
    }

    #[test]
    fn output_under_a_file_is_a_violation() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "x").unwrap();
        let mut s = minimal();
        s.output = file.join("run");
        let v = validate_config(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "output");
    }

    #[test]
    fn overrides_apply() {
        let mut s = minimal();
        s.apply(&Overrides {
            seed: Some(9),
            output: Some("/x".into()),
            arm: Some(Arm::LpCt),
            clients: None,
        });
        assert_eq!((s.seed, s.federation.seed), (9, 9));
        assert_eq!(s.output, PathBuf::from("/x"));
        assert_eq!((s.federation.arm, s.federation.clients), (Arm::LpCt, 1));
        assert!(validate_config(&s).is_empty());
    }
}

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pattern::Pattern;
use super::PromptError;
use crate::data::{split_words, Tokenizer};

/// Label → word list mapping. Index `l` holds the words of label `l`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    labels: Vec<Vec<String>>,
}

impl Verbalizer {
    pub fn new(labels: Vec<Vec<String>>) -> Result<Self, PromptError> {
        if labels.len() < 2 {
            return Err(PromptError::BadVerbalizer("need at least two labels".into()));
        }
        let mut seen = HashSet::new();
        for (l, words) in labels.iter().enumerate() {
            if words.is_empty() {
                return Err(PromptError::BadVerbalizer(format!("label {l} has no words")));
            }
            for w in words {
                if !seen.insert(w.as_str()) {
                    return Err(PromptError::BadVerbalizer(format!(
                        "word {w:?} is mapped to more than one label"
                    )));
                }
                if split_words(w) != [w.clone()] {
                    return Err(PromptError::BadVerbalizer(format!(
                        "word {w:?} is not a single lowercase token"
                    )));
                }
            }
        }
        Ok(Self { labels })
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn words(&self, label: usize) -> &[String] {
        &self.labels[label]
    }

    pub fn all_words(&self) -> Vec<String> {
        self.labels.iter().flatten().cloned().collect()
    }

    /// Vocabulary ids of every word, grouped by label.
    pub fn resolve(&self, tokenizer: &Tokenizer) -> Result<ResolvedVerbalizer, PromptError> {
        let mut word_ids = Vec::new();
        let mut groups = Vec::with_capacity(self.labels.len());
        for words in &self.labels {
            let mut group = Vec::with_capacity(words.len());
            for w in words {
                let id = tokenizer.id(w).ok_or_else(|| PromptError::OutOfVocabulary(w.clone()))?;
                group.push(word_ids.len());
                word_ids.push(id);
            }
            groups.push(group);
        }
        Ok(ResolvedVerbalizer { word_ids, groups })
    }
}

/// Verbalizer words as vocabulary ids. `groups[l]` indexes into `word_ids`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedVerbalizer {
    pub word_ids: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl ResolvedVerbalizer {
    pub fn num_labels(&self) -> usize {
        self.groups.len()
    }
}

#[derive(Deserialize, Serialize)]
struct PatternDef {
    id: String,
    template: String,
}

#[derive(Deserialize, Serialize)]
struct PromptFile {
    patterns: Vec<PatternDef>,
    verbalizer: VerbalizerDef,
}

#[derive(Deserialize, Serialize)]
struct VerbalizerDef {
    labels: Vec<Vec<String>>,
}

/// Patterns plus verbalizer, as stored in a definition file.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    pub patterns: Vec<Pattern>,
    pub verbalizer: Verbalizer,
}

pub const IMDB_PROMPTS: &str = include_str!("../../fixtures/imdb_prompts.toml");
pub const YELP_PROMPTS: &str = include_str!("../../fixtures/yelp_prompts.toml");

impl PromptSet {
    /// Parses the TOML definition format:
    ///
    /// ```toml
    /// [[patterns]]
    /// id = "p1"
    /// template = "It was [MASK]. {x}"
    ///
    /// [verbalizer]
    /// labels = [["bad", "awful"], ["good", "great"]]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let file: PromptFile = toml::from_str(text).map_err(|e| PromptError::File(e.to_string()))?;
        if file.patterns.is_empty() {
            return Err(PromptError::File("no patterns defined".into()));
        }
        let patterns = file
            .patterns
            .iter()
            .map(|p| Pattern::parse(p.id.clone(), &p.template))
            .collect::<Result<Vec<_>, _>>()?;
        let mut ids = HashSet::new();
        if let Some(dup) = patterns.iter().find(|p| !ids.insert(p.id.as_str())) {
            return Err(PromptError::File(format!("duplicate pattern id {}", dup.id)));
        }
        Ok(Self {
            patterns,
            verbalizer: Verbalizer::new(file.verbalizer.labels)?,
        })
    }

    pub fn to_toml(&self) -> String {
        let file = PromptFile {
            patterns: self
                .patterns
                .iter()
                .map(|p| PatternDef {
                    id: p.id.clone(),
                    template: p.template().to_owned(),
                })
                .collect(),
            verbalizer: VerbalizerDef {
                labels: self.verbalizer.labels.clone(),
            },
        };
        toml::to_string(&file).expect("prompt sets serialize")
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::File(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn imdb() -> Self {
        Self::from_toml(IMDB_PROMPTS).expect("bundled IMDB prompts are valid")
    }

    pub fn yelp() -> Self {
        Self::from_toml(YELP_PROMPTS).expect("bundled Yelp prompts are valid")
    }

    /// Words the vocabulary must contain: pattern words then verbalizer words.
    pub fn forced_words(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for w in self
            .patterns
            .iter()
            .flat_map(|p| p.words())
            .chain(self.verbalizer.all_words())
        {
            if !out.contains(&w) {
                out.push(w);
            }
        }
        out
    }
}

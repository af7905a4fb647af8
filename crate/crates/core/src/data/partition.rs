//! Seeded IID partitioning into client shards, validation and test sets.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::semisup::{Example, ExampleId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub clients: usize,
    pub labeled_fraction: f64,
    pub val_size: usize,
    #[serde(default)]
    pub test_size: usize,
    pub seed: u64,
}

/// One client's local data: seed-labeled `T_k` and unlabeled `U_k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClientShard {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
}

/// True labels of pool examples, kept apart from training data. Only
/// reporting code reads it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HiddenLabels(BTreeMap<ExampleId, usize>);

impl HiddenLabels {
    pub fn get(&self, id: ExampleId) -> Option<usize> {
        self.0.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Shard membership by example id; enough to rebuild a split exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config: PartitionConfig,
    pub client_labeled: Vec<Vec<ExampleId>>,
    pub client_unlabeled: Vec<Vec<ExampleId>>,
    pub validation: Vec<ExampleId>,
    pub test: Vec<ExampleId>,
}

impl SplitManifest {
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| DataError::Malformed {
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub clients: Vec<ClientShard>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub hidden: HiddenLabels,
    pub manifest: SplitManifest,
}

impl DatasetSplit {
    pub fn labeled_total(&self) -> usize {
        self.clients.iter().map(|c| c.labeled.len()).sum()
    }

    pub fn unlabeled_total(&self) -> usize {
        self.clients.iter().map(|c| c.unlabeled.len()).sum()
    }
}

/// Splits `examples` into `K` client shards plus validation and test sets.
///
/// Examples are put into a canonical order (by text, then label) before the
/// seeded shuffle, so the split does not depend on input order. Test,
/// seed-labeled and validation examples are drawn, in that order, from
/// records that carry a label; the seed-labeled count is
/// `round(labeled_fraction × (n − test_size))`. Everything else becomes the
/// unlabeled pool, with labels moved into [`HiddenLabels`]. Shards are dealt
/// round-robin so sizes differ by at most one.
pub fn partition(examples: &[Example], cfg: &PartitionConfig) -> Result<DatasetSplit, DataError> {
    if cfg.clients == 0 {
        return Err(DataError::InvalidConfig("clients must be positive".into()));
    }
    if !(cfg.labeled_fraction > 0.0 && cfg.labeled_fraction <= 1.0) {
        return Err(DataError::InvalidConfig(format!(
            "labeled_fraction must lie in (0, 1], got {}",
            cfg.labeled_fraction
        )));
    }
    let mut order: Vec<&Example> = examples.iter().collect();
    order.sort_by(|a, b| a.text.cmp(&b.text).then_with(|| a.hard_label().cmp(&b.hard_label())));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);

    let (with_label, without): (Vec<&Example>, Vec<&Example>) =
        order.into_iter().partition(|e| e.hard_label().is_some());
    let pool = examples.len().saturating_sub(cfg.test_size);
    let n_labeled = (cfg.labeled_fraction * pool as f64).round() as usize;
    let needed = cfg.test_size + n_labeled + cfg.val_size;
    if n_labeled < cfg.clients || with_label.len() < needed {
        return Err(DataError::InsufficientData {
            needed: needed.max(cfg.test_size + cfg.clients + cfg.val_size),
            available: with_label.len(),
        });
    }

    let test = &with_label[..cfg.test_size];
    let labeled = &with_label[cfg.test_size..cfg.test_size + n_labeled];
    let val = &with_label[cfg.test_size + n_labeled..needed];
    let rest = with_label[needed..].iter().chain(without.iter());

    let ids = |xs: &[&Example]| xs.iter().map(|e| e.id).collect::<Vec<_>>();
    let mut manifest = SplitManifest {
        config: cfg.clone(),
        client_labeled: vec![Vec::new(); cfg.clients],
        client_unlabeled: vec![Vec::new(); cfg.clients],
        validation: ids(val),
        test: ids(test),
    };
    for (i, e) in labeled.iter().enumerate() {
        manifest.client_labeled[i % cfg.clients].push(e.id);
    }
    for (i, e) in rest.enumerate() {
        manifest.client_unlabeled[i % cfg.clients].push(e.id);
    }
    apply_manifest(examples, &manifest)
}

/// Rebuilds the split recorded in `manifest`.
pub fn apply_manifest(examples: &[Example], manifest: &SplitManifest) -> Result<DatasetSplit, DataError> {
    let by_id: HashMap<ExampleId, &Example> = examples.iter().map(|e| (e.id, e)).collect();
    let fetch = |id: &ExampleId| by_id.get(id).copied().ok_or(DataError::UnknownExample(id.0));
    let fetch_labeled = |id: &ExampleId| {
        let e = fetch(id)?;
        if e.hard_label().is_none() {
            return Err(DataError::MissingLabel(id.0));
        }
        Ok(e.clone())
    };
    let mut hidden = BTreeMap::new();
    let mut clients = Vec::with_capacity(manifest.client_labeled.len());
    for (lab, unl) in manifest.client_labeled.iter().zip(&manifest.client_unlabeled) {
        let labeled = lab.iter().map(fetch_labeled).collect::<Result<Vec<_>, _>>()?;
        let mut unlabeled = Vec::with_capacity(unl.len());
        for id in unl {
            let e = fetch(id)?;
            if let Some(l) = e.hard_label() {
                hidden.insert(e.id, l);
            }
            unlabeled.push(e.clone().into_unlabeled());
        }
        clients.push(ClientShard { labeled, unlabeled });
    }
    Ok(DatasetSplit {
        clients,
        validation: manifest
            .validation
            .iter()
            .map(fetch_labeled)
            .collect::<Result<_, _>>()?,
        test: manifest.test.iter().map(fetch_labeled).collect::<Result<_, _>>()?,
        hidden: HiddenLabels(hidden),
        manifest: manifest.clone(),
    })
}

//! On-disk benchmark layout: a model zoo, dataset statistics and scores.
//!
//! ```text
//! <dir>/models/<model_id>.json
//! <dir>/datasets/<dataset_id>/{meta.json,mean.f32,cov.f32}
//! <dir>/perf.csv
//! <dir>/initial.csv      (optional)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{load_zoo, ModelCard};
use crate::perf::PerfTable;
use crate::stats::{load_stats, save_stats, EmbeddingStats};

pub const MODELS_DIR: &str = "models";
pub const DATASETS_DIR: &str = "datasets";
pub const PERF_FILE: &str = "perf.csv";
pub const INITIAL_FILE: &str = "initial.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub cards: Vec<ModelCard>,
    pub stats: BTreeMap<String, EmbeddingStats>,
    pub perf: PerfTable,
}

/// Load every stats container found directly under `dir`, keyed by
/// sub-directory name.
pub fn load_dataset_dir(dir: &Path) -> Result<BTreeMap<String, EmbeddingStats>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        out.insert(name, load_stats(&path)?);
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no dataset statistics under {}", dir.display())));
    }
    Ok(out)
}

impl Corpus {
    pub fn new(cards: Vec<ModelCard>, stats: BTreeMap<String, EmbeddingStats>, perf: PerfTable) -> Result<Self> {
        let c = Self { cards, stats, perf };
        c.validate()?;
        Ok(c)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cards = load_zoo(&dir.join(MODELS_DIR))?;
        let stats = load_dataset_dir(&dir.join(DATASETS_DIR))?;
        let initial = dir.join(INITIAL_FILE);
        let perf = PerfTable::load(&dir.join(PERF_FILE), initial.exists().then_some(initial.as_path()))?;
        Self::new(cards, stats, perf)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for c in &self.cards {
            c.save(&dir.join(MODELS_DIR).join(format!("{}.json", c.model_id)))?;
        }
        for (id, s) in &self.stats {
            save_stats(s, &dir.join(DATASETS_DIR).join(id))?;
        }
        self.perf.save_csv(&dir.join(PERF_FILE))?;
        if self.perf.initial.is_some() {
            self.perf.save_initial_csv(&dir.join(INITIAL_FILE))?;
        }
        Ok(())
    }

    /// Model ids in zoo order.
    pub fn model_ids(&self) -> Vec<String> {
        self.cards.iter().map(|c| c.model_id.clone()).collect()
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.stats.keys().cloned().collect()
    }

    /// Scores must cover the full models x datasets grid, and every id they
    /// mention must be known.
    pub fn validate(&self) -> Result<()> {
        if self.cards.len() < 2 {
            return Err(Error::Input("zoo needs at least 2 models".into()));
        }
        self.perf.validate()?;
        let models = self.model_ids();
        for m in self.perf.models() {
            if !models.iter().any(|x| x == m) {
                return Err(Error::UnknownId(format!("model {m} in performance table")));
            }
        }
        for d in self.perf.datasets() {
            if !self.stats.contains_key(d) {
                return Err(Error::UnknownId(format!("dataset {d} in performance table")));
            }
        }
        self.perf
            .ensure_complete(models.iter().map(String::as_str), self.stats.keys().map(String::as_str))
    }
}

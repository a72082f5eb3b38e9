//! Post-fine-tuning performance tables (lower score is better).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

/// Scores are compared on a 1e-6 grid before falling back to model id.
pub fn score_key(score: f64) -> i64 {
    (score * 1e6).round() as i64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PerfRecord {
    model_id: String,
    dataset_id: String,
    score: f64,
}

/// Scores keyed by `(model_id, dataset_id)`, with optional pre-fine-tuning
/// scores of the same shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerfTable {
    pub entries: BTreeMap<(String, String), f64>,
    pub initial: Option<BTreeMap<(String, String), f64>>,
}

impl PerfTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: &str, dataset: &str, score: f64) {
        self.entries.insert((model.to_string(), dataset.to_string()), score);
    }

    pub fn get(&self, model: &str, dataset: &str) -> Option<f64> {
        self.entries.get(&(model.to_string(), dataset.to_string())).copied()
    }

    pub fn initial_score(&self, model: &str, dataset: &str) -> Option<f64> {
        self.initial
            .as_ref()?
            .get(&(model.to_string(), dataset.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn models(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(m, _)| m.as_str()).collect()
    }

    pub fn datasets(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(_, d)| d.as_str()).collect()
    }

    /// `(model, score)` pairs recorded for `dataset`, ordered by model id.
    pub fn dataset_scores(&self, dataset: &str) -> Vec<(&str, f64)> {
        self.entries
            .iter()
            .filter(|((_, d), _)| d == dataset)
            .map(|((m, _), &s)| (m.as_str(), s))
            .collect()
    }

    /// Models of `dataset` ordered best first (score, then id).
    pub fn true_order(&self, dataset: &str) -> Vec<String> {
        let mut scores = self.dataset_scores(dataset);
        scores.sort_by(|a, b| score_key(a.1).cmp(&score_key(b.1)).then(a.0.cmp(b.0)));
        scores.into_iter().map(|(m, _)| m.to_string()).collect()
    }

    pub fn best_model(&self, dataset: &str) -> Option<String> {
        self.true_order(dataset).into_iter().next()
    }

    pub fn min_score(&self, dataset: &str) -> Option<f64> {
        self.dataset_scores(dataset)
            .into_iter()
            .map(|(_, s)| s)
            .min_by(f64::total_cmp)
    }

    /// Copy with every entry of `dataset` removed (initial scores kept).
    pub fn without_dataset(&self, dataset: &str) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|((_, d), _)| d != dataset)
                .map(|(k, &v)| (k.clone(), v))
                .collect(),
            initial: self.initial.clone(),
        }
    }

    /// Check that every `(model, dataset)` combination has a score.
    pub fn ensure_complete<'a>(
        &self,
        models: impl IntoIterator<Item = &'a str> + Clone,
        datasets: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        for d in datasets {
            for m in models.clone() {
                if self.get(m, d).is_none() {
                    return Err(Error::Input(format!("performance table is missing ({m}, {d})")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for ((m, d), s) in self.entries.iter().chain(self.initial.iter().flatten()) {
            if !s.is_finite() || *s < 0.0 {
                return Err(Error::Input(format!(
                    "score for ({m}, {d}) must be finite and non-negative, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Ok(Self {
            entries: read_score_csv(path)?,
            initial: None,
        })
    }

    /// Load scores and, if `initial` is given, pre-fine-tuning scores.
    pub fn load(path: &Path, initial: Option<&Path>) -> Result<Self> {
        let mut table = Self::load_csv(path)?;
        if let Some(p) = initial {
            table.initial = Some(read_score_csv(p)?);
        }
        table.validate()?;
        Ok(table)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_score_csv(path, &self.entries)
    }

    pub fn save_initial_csv(&self, path: &Path) -> Result<()> {
        match &self.initial {
            Some(initial) => write_score_csv(path, initial),
            None => Err(Error::Input("table has no initial scores".into())),
        }
    }
}

fn read_score_csv(path: &Path) -> Result<BTreeMap<(String, String), f64>> {
    let text = fsutil::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["model_id", "dataset_id", "score"] {
        return Err(Error::format(path, "header must be `model_id,dataset_id,score`"));
    }
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<PerfRecord>() {
        let r = row.map_err(|e| Error::format(path, e.to_string()))?;
        if out
            .insert((r.model_id.clone(), r.dataset_id.clone()), r.score)
            .is_some()
        {
            return Err(Error::format(
                path,
                format!("duplicate entry ({}, {})", r.model_id, r.dataset_id),
            ));
        }
    }
    Ok(out)
}

fn write_score_csv(path: &Path, entries: &BTreeMap<(String, String), f64>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for ((m, d), &score) in entries {
        writer
            .serialize(PerfRecord {
                model_id: m.clone(),
                dataset_id: d.clone(),
                score,
            })
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    fsutil::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn true_order_breaks_ties_by_id() {
        let mut t = PerfTable::new();
        t.insert("B", "d", 2.0);
        t.insert("A", "d", 2.0000000001);
        t.insert("C", "d", 1.0);
        assert_eq!(t.true_order("d"), ["C", "A", "B"]);
        assert_eq!(t.best_model("d").as_deref(), Some("C"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = PerfTable::new();
        t.insert("m1", "d1", 12.5);
        t.insert("m2", "d1", 0.1);
        let p = dir.path().join("perf.csv");
        t.save_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("model_id,dataset_id,score\n"));
        assert_eq!(PerfTable::load_csv(&p).unwrap(), t);
    }

    #[test]
    fn rejects_bad_header_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("perf.csv");
        std::fs::write(&p, "model,dataset,score\nm,d,1\n").unwrap();
        assert!(matches!(PerfTable::load_csv(&p), Err(Error::Format { .. })));
        std::fs::write(&p, "model_id,dataset_id,score\nm,d,1\nm,d,2\n").unwrap();
        assert!(matches!(PerfTable::load_csv(&p), Err(Error::Format { .. })));
    }
}

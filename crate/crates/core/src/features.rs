//! Numeric encodings of model cards and datasets, and predictor rows.
//!
//! Only hyperparameters that vary across the zoo are encoded. Numeric keys
//! are z-scored with the zoo's population statistics; keys missing on some
//! cards get an extra 0/1 indicator column. Boolean and string keys are
//! one-hot encoded, with `"∅"` standing for "absent on this card". The two
//! mandatory quantities (parameter count and throughput) are always
//! encoded, even when constant.
//!
//! Column order: numeric hyperparameters by key (each followed by its
//! missing indicator), then one-hot columns by key and category, then
//! `num_params` and `throughput_flops`.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::stats::EmbeddingStats;

pub const MISSING_CATEGORY: &str = "∅";
pub const NUM_PARAMS_KEY: &str = "num_params";
pub const THROUGHPUT_KEY: &str = "throughput_flops";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl HyperValue {
    fn as_number(&self) -> Option<f64> {
        match self {
            HyperValue::Number(x) => Some(*x),
            _ => None,
        }
    }

    fn category(&self) -> String {
        match self {
            HyperValue::Bool(b) => b.to_string(),
            HyperValue::Number(x) => x.to_string(),
            HyperValue::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub model_id: String,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, HyperValue>,
    pub throughput_flops: f64,
    pub num_params: f64,
}

impl ModelCard {
    pub fn load(path: &Path) -> Result<Self> {
        let card: ModelCard = fsutil::read_json(path)?;
        if !(card.throughput_flops > 0.0 && card.num_params > 0.0) {
            return Err(Error::format(path, "throughput_flops and num_params must be positive"));
        }
        Ok(card)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }
}

/// Load every `*.json` card in `dir`, ordered by file name.
pub fn load_zoo(dir: &Path) -> Result<Vec<ModelCard>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let cards = paths.iter().map(|p| ModelCard::load(p)).collect::<Result<Vec<_>>>()?;
    let mut seen = BTreeSet::new();
    for c in &cards {
        if !seen.insert(c.model_id.as_str()) {
            return Err(Error::DuplicateId(format!("model {}", c.model_id)));
        }
    }
    Ok(cards)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Column {
    Numeric { key: String, mean: f64, std: f64 },
    Missing { key: String },
    OneHot { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
}

fn population_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fit the encoding on a zoo of at least two cards.
pub fn fit_schema(cards: &[ModelCard]) -> Result<FeatureSchema> {
    if cards.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 model cards to fit a schema, got {}",
            cards.len()
        )));
    }
    let keys: BTreeSet<&str> = cards
        .iter()
        .flat_map(|c| c.hyperparams.keys().map(String::as_str))
        .filter(|k| *k != NUM_PARAMS_KEY && *k != THROUGHPUT_KEY)
        .collect();

    let mut numeric = Vec::new();
    let mut one_hot = Vec::new();
    for key in keys {
        let values: Vec<Option<&HyperValue>> = cards.iter().map(|c| c.hyperparams.get(key)).collect();
        if values.iter().all(|v| *v == values[0]) {
            continue;
        }
        let present: Vec<&HyperValue> = values.iter().flatten().copied().collect();
        let any_missing = present.len() < values.len();
        if let Some(nums) = present.iter().map(|v| v.as_number()).collect::<Option<Vec<f64>>>() {
            let (mean, std) = population_stats(&nums);
            numeric.push(Column::Numeric {
                key: key.to_string(),
                mean,
                std,
            });
            if any_missing {
                numeric.push(Column::Missing { key: key.to_string() });
            }
        } else {
            let mut cats: BTreeSet<String> = present.iter().map(|v| v.category()).collect();
            if any_missing {
                cats.insert(MISSING_CATEGORY.to_string());
            }
            one_hot.extend(cats.into_iter().map(|value| Column::OneHot {
                key: key.to_string(),
                value,
            }));
        }
    }

    let mut columns = numeric;
    columns.extend(one_hot);
    for (key, values) in [
        (NUM_PARAMS_KEY, cards.iter().map(|c| c.num_params).collect::<Vec<_>>()),
        (THROUGHPUT_KEY, cards.iter().map(|c| c.throughput_flops).collect()),
    ] {
        let (mean, std) = population_stats(&values);
        columns.push(Column::Numeric {
            key: key.to_string(),
            mean,
            std,
        });
    }
    Ok(FeatureSchema { columns })
}

impl FeatureSchema {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        fsutil::read_json(path)
    }
}

fn raw_value(card: &ModelCard, key: &str) -> Option<HyperValue> {
    match key {
        NUM_PARAMS_KEY => Some(HyperValue::Number(card.num_params)),
        THROUGHPUT_KEY => Some(HyperValue::Number(card.throughput_flops)),
        _ => card.hyperparams.get(key).cloned(),
    }
}

/// Encode `card` under `schema`; unseen categories encode as all zeros.
pub fn encode_model(card: &ModelCard, schema: &FeatureSchema) -> Vec<f64> {
    schema
        .columns
        .iter()
        .map(|col| match col {
            Column::Numeric { key, mean, std } => match raw_value(card, key).and_then(|v| v.as_number()) {
                Some(x) if *std > 0.0 => (x - mean) / std,
                _ => 0.0,
            },
            Column::Missing { key } => {
                let present = raw_value(card, key).and_then(|v| v.as_number()).is_some();
                if present {
                    0.0
                } else {
                    1.0
                }
            }
            Column::OneHot { key, value } => {
                let cat = raw_value(card, key)
                    .map(|v| v.category())
                    .unwrap_or_else(|| MISSING_CATEGORY.to_string());
                if cat == *value {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect()
}

pub fn dataset_feature(stats: &EmbeddingStats) -> Vec<f64> {
    stats.mean.iter().copied().collect()
}

/// Widths of the three concatenated segments of a predictor row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLayout {
    pub model_width: usize,
    pub dataset_width: usize,
    pub edge_width: usize,
}

impl RowLayout {
    pub fn width(&self) -> usize {
        self.model_width + self.dataset_width + self.edge_width
    }

    pub fn model_range(&self) -> Range<usize> {
        0..self.model_width
    }

    pub fn dataset_range(&self) -> Range<usize> {
        self.model_width..self.model_width + self.dataset_width
    }

    pub fn edge_range(&self) -> Range<usize> {
        self.model_width + self.dataset_width..self.width()
    }
}

/// One predictor input; `label` is the 1-based rank class when supervised.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub input: Vec<f64>,
    pub label: Option<u32>,
    pub model_id: String,
    pub dataset_id: String,
}

pub fn assemble_row(
    model_vec: &[f64],
    dataset_vec: &[f64],
    edge_vec: &[f64],
    label: Option<u32>,
    model_id: &str,
    dataset_id: &str,
) -> Result<TrainingRow> {
    let mut input = Vec::with_capacity(model_vec.len() + dataset_vec.len() + edge_vec.len());
    input.extend_from_slice(model_vec);
    input.extend_from_slice(dataset_vec);
    input.extend_from_slice(edge_vec);
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "row ({model_id}, {dataset_id}) has non-finite entries"
        )));
    }
    Ok(TrainingRow {
        input,
        label,
        model_id: model_id.to_string(),
        dataset_id: dataset_id.to_string(),
    })
}

//! Seeded synthetic benchmarks with planted cluster structure.
//!
//! Datasets fall into clusters. A cluster fixes a covariance shape and a
//! mean center; every model has a base quality and a per-cluster affinity, and
//! each cluster is assigned a planted winner. Dataset means are kept close
//! together, so most of the cluster signal is only visible through Fréchet
//! distances.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{HyperValue, ModelCard};
use crate::perf::PerfTable;
use crate::seed;
use crate::stats::EmbeddingStats;

pub const SYNTH_PROBE_ID: &str = "synthetic-probe";
const MAX_ATTEMPTS: u64 = 1000;
const SAMPLES_PER_DATASET: usize = 1000;

// Score model, in score units.
const SCORE_OFFSET: f64 = 2.0;
const QUALITY_RANGE: f64 = 1.0;
const AFFINITY_SD: f64 = 0.3;
const WINNER_GAP: f64 = 0.8;
// Pre-fine-tuning scores.
const INITIAL_OFFSET: f64 = 1.5;
const INITIAL_MODEL_SPREAD: f64 = 6.0;
const INITIAL_NOISE: f64 = 1.0;
// Embedding geometry.
const CENTER_SCALE: f64 = 0.3;
const COV_SCALE: f64 = 4.0;
const LOG_EIGEN_RANGE: f64 = 2.0;
const COV_JITTER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_models: usize,
    pub n_datasets: usize,
    pub n_clusters: usize,
    /// Probe embedding dimension.
    pub emb_dim: usize,
    /// Spread of dataset means around their cluster center.
    pub cluster_spread: f64,
    /// Standard deviation of per-entry score noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_models: 10,
            n_datasets: 32,
            n_clusters: 4,
            emb_dim: 8,
            cluster_spread: 0.3,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_models < 2 {
            return Err(Error::Config("need at least 2 models".into()));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_datasets {
            return Err(Error::Config("cluster count must lie in 1..=n_datasets".into()));
        }
        if self.emb_dim < 2 {
            return Err(Error::Config("emb_dim must be at least 2".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::Config("cluster_spread must be non-negative".into()));
        }
        Ok(())
    }
}

/// A generated benchmark plus the planted truth behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub corpus: Corpus,
    /// Cluster of every dataset.
    pub clusters: BTreeMap<String, usize>,
    /// Noise-free winner of every cluster.
    pub cluster_winners: Vec<String>,
}

fn pad_width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(2)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    // Filled column by column.
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, d, d).qr().q()
}

fn cluster_covariance(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let q = random_rotation(rng, d);
    let eig = DVector::from_fn(d, |_, _| {
        COV_SCALE * rng.gen_range(-LOG_EIGEN_RANGE..LOG_EIGEN_RANGE).exp()
    });
    let cov = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&cov + cov.transpose()) * 0.5
}

struct Draft {
    scores: Vec<Vec<f64>>,
    cluster_of: Vec<usize>,
    winners: Vec<usize>,
    base: Vec<f64>,
}

fn draft_scores(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Draft {
    let (m, k) = (cfg.n_models, cfg.n_clusters);
    let base: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..QUALITY_RANGE)).collect();
    let mut affinity: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..k).map(|_| AFFINITY_SD * normal(rng)).collect())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let winners: Vec<usize> = (0..k).map(|c| order[c % m]).collect();
    for (c, &w) in winners.iter().enumerate() {
        affinity[w][c] -= WINNER_GAP;
    }
    let cluster_of: Vec<usize> = (0..cfg.n_datasets).map(|i| i % k).collect();
    let scores = (0..m)
        .map(|i| {
            cluster_of
                .iter()
                .map(|&c| (SCORE_OFFSET + base[i] + affinity[i][c] + cfg.noise_sigma * normal(rng)).max(0.0))
                .collect()
        })
        .collect();
    // Winners as realized without noise.
    let winners = (0..k)
        .map(|c| {
            (0..m)
                .min_by(|&a, &b| {
                    (base[a] + affinity[a][c])
                        .total_cmp(&(base[b] + affinity[b][c]))
                        .then(a.cmp(&b))
                })
                .unwrap_or(0)
        })
        .collect();
    Draft {
        scores,
        cluster_of,
        winners,
        base,
    }
}

fn distinct_dataset_winners(scores: &[Vec<f64>], n_datasets: usize) -> usize {
    (0..n_datasets)
        .map(|d| {
            (0..scores.len())
                .min_by(|&a, &b| scores[a][d].total_cmp(&scores[b][d]).then(a.cmp(&b)))
                .unwrap_or(0)
        })
        .collect::<BTreeSet<_>>()
        .len()
}

fn model_card(rng: &mut ChaCha8Rng, id: &str, quality: f64) -> ModelCard {
    // Lower base score means a better model; bigger models are better here.
    let strength = 1.0 - quality / QUALITY_RANGE;
    let mut hp = BTreeMap::new();
    let layers = (8.0 + 16.0 * strength + normal(rng)).round().max(1.0);
    hp.insert("layers".to_string(), HyperValue::Number(layers));
    let width = 256.0 * (1.0 + (2.0 * strength + 0.3 * normal(rng)).max(0.0).round());
    hp.insert("width".to_string(), HyperValue::Number(width));
    let optimizers = ["adam", "adamw", "lion"];
    let opt = optimizers[rng.gen_range(0..optimizers.len())];
    hp.insert("optimizer".to_string(), HyperValue::Text(opt.to_string()));
    hp.insert("ema".to_string(), HyperValue::Bool(rng.gen_bool(0.5)));
    if rng.gen_bool(0.5) {
        let heads = [4.0, 8.0, 16.0][rng.gen_range(0..3)];
        hp.insert("attention_heads".to_string(), HyperValue::Number(heads));
    }
    let decoy_lr = (10f64).powf(rng.gen_range(-5.0..-3.0));
    hp.insert("learning_rate".to_string(), HyperValue::Number(decoy_lr));
    ModelCard {
        model_id: id.to_string(),
        hyperparams: hp,
        throughput_flops: 1e12 * rng.gen_range(1.0..5.0),
        num_params: 1e8 * (1.0 + 4.0 * strength + 0.5 * rng.gen::<f64>()),
    }
}

/// Generate a benchmark. Score drafts are resampled until at least two
/// models are per-dataset optimal somewhere (when there are two or more
/// clusters).
pub fn generate_benchmark(cfg: &SynthConfig) -> Result<Benchmark> {
    cfg.validate()?;
    let (m, n, d) = (cfg.n_models, cfg.n_datasets, cfg.emb_dim);
    let model_ids: Vec<String> = (0..m).map(|i| format!("m{i:0w$}", w = pad_width(m))).collect();
    let dataset_ids: Vec<String> = (0..n).map(|i| format!("d{i:0w$}", w = pad_width(n))).collect();

    let mut draft = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seed::rng(cfg.seed, "synth-scores", &[attempt]);
        let candidate = draft_scores(&mut rng, cfg);
        let winners: BTreeSet<usize> = candidate.winners.iter().copied().collect();
        let ok = cfg.n_clusters < 2 || (winners.len() >= 2 && distinct_dataset_winners(&candidate.scores, n) >= 2);
        if ok {
            draft = Some(candidate);
            break;
        }
    }
    let draft = draft.ok_or_else(|| {
        Error::Config(format!(
            "no score draft with two distinct winners after {MAX_ATTEMPTS} attempts"
        ))
    })?;

    let mut rng = seed::rng(cfg.seed, "synth-geometry", &[]);
    let centers: Vec<DVector<f64>> = (0..cfg.n_clusters)
        .map(|_| DVector::from_fn(d, |_, _| CENTER_SCALE * normal(&mut rng)))
        .collect();
    let covs: Vec<DMatrix<f64>> = (0..cfg.n_clusters).map(|_| cluster_covariance(&mut rng, d)).collect();
    let mut stats = BTreeMap::new();
    let mut clusters = BTreeMap::new();
    for (i, id) in dataset_ids.iter().enumerate() {
        let c = draft.cluster_of[i];
        let mean = &centers[c] + DVector::from_fn(d, |_, _| cfg.cluster_spread * normal(&mut rng));
        let g = gaussian_matrix(&mut rng, d, d);
        let jitter = &g * g.transpose() * (COV_JITTER / d as f64);
        let cov = &covs[c] + (&jitter + jitter.transpose()) * 0.5;
        let s = EmbeddingStats::new(mean, cov, SAMPLES_PER_DATASET, SYNTH_PROBE_ID)?.to_f32_precision();
        stats.insert(id.clone(), s);
        clusters.insert(id.clone(), c);
    }

    let mut rng = seed::rng(cfg.seed, "synth-initial", &[]);
    let mut offsets: Vec<f64> = (0..m)
        .map(|i| INITIAL_MODEL_SPREAD * i as f64 / (m - 1) as f64)
        .collect();
    offsets.shuffle(&mut rng);
    let mut perf = PerfTable::new();
    let mut initial = BTreeMap::new();
    for (mi, mid) in model_ids.iter().enumerate() {
        for (di, did) in dataset_ids.iter().enumerate() {
            let s = draft.scores[mi][di];
            perf.insert(mid, did, s);
            let init = s + INITIAL_OFFSET + offsets[mi] + INITIAL_NOISE * normal(&mut rng).abs();
            initial.insert((mid.clone(), did.clone()), init);
        }
    }
    perf.initial = Some(initial);

    let mut rng = seed::rng(cfg.seed, "synth-cards", &[]);
    let cards = model_ids
        .iter()
        .zip(&draft.base)
        .map(|(id, &b)| model_card(&mut rng, id, b))
        .collect();

    let corpus = Corpus::new(cards, stats, perf)?;
    if cfg.n_clusters >= 2 {
        let winners: BTreeSet<String> = dataset_ids.iter().filter_map(|d| corpus.perf.best_model(d)).collect();
        assert!(winners.len() >= 2, "a single model wins every dataset");
    }
    Ok(Benchmark {
        corpus,
        clusters,
        cluster_winners: draft.winners.iter().map(|&w| model_ids[w].clone()).collect(),
    })
}

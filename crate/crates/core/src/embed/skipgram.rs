//! Skip-gram with negative sampling over walk corpora.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgnsConfig {
    pub emb_dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        Self {
            emb_dim: 128,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 0,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.window == 0 || self.epochs == 0 {
            return Err(Error::Config("emb_dim, window and epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Trained input ("center") and output ("context") vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramModel {
    pub dim: usize,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl SkipGramModel {
    pub fn input_vector(&self, v: usize) -> &[f64] {
        &self.input[v * self.dim..(v + 1) * self.dim]
    }

    pub fn output_vector(&self, v: usize) -> &[f64] {
        &self.output[v * self.dim..(v + 1) * self.dim]
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-30.0, 30.0)).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Train SGNS over `walks` for a vocabulary of `n_vertices` ids.
///
/// Negatives come from the unigram distribution raised to 0.75; the learning
/// rate decays linearly to `1e-4 * lr` over all epochs.
pub fn train_skipgram(walks: &[Vec<usize>], n_vertices: usize, cfg: &SgnsConfig) -> Result<SkipGramModel> {
    cfg.validate()?;
    let total_tokens: usize = walks.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(Error::Input("walk corpus is empty".into()));
    }
    let mut counts = vec![0f64; n_vertices];
    for &v in walks.iter().flatten() {
        if v >= n_vertices {
            return Err(Error::Input(format!("walk references vertex {v} >= {n_vertices}")));
        }
        counts[v] += 1.0;
    }
    let noise = WeightedIndex::new(counts.iter().map(|c| c.powf(0.75)))
        .map_err(|e| Error::Input(format!("cannot build the negative table: {e}")))?;

    let dim = cfg.emb_dim;
    let mut init_rng = seed::rng(cfg.seed, "sgns-init", &[]);
    let scale = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..n_vertices * dim)
        .map(|_| init_rng.gen_range(-scale..scale))
        .collect();
    let mut output = vec![0.0; n_vertices * dim];

    let mut rng = seed::rng(cfg.seed, "sgns-train", &[]);
    let budget = (cfg.epochs * total_tokens) as f64;
    let mut processed = 0usize;
    let mut grad = vec![0.0; dim];
    for _ in 0..cfg.epochs {
        for walk in walks {
            for (i, &center) in walk.iter().enumerate() {
                let lr = cfg.lr * (1.0 - processed as f64 / budget).max(1e-4);
                processed += 1;
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(walk.len());
                for (j, &context) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let u = center * dim..(center + 1) * dim;
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let n = noise.sample(&mut rng);
                            if n == context {
                                continue;
                            }
                            (n, 0.0)
                        };
                        let o = target * dim..(target + 1) * dim;
                        let score = dot(&input[u.clone()], &output[o.clone()]);
                        let g = (label - sigmoid(score)) * lr;
                        for (gr, &ov) in grad.iter_mut().zip(&output[o.clone()]) {
                            *gr += g * ov;
                        }
                        for (ov, &iv) in output[o].iter_mut().zip(&input[u.clone()]) {
                            *ov += g * iv;
                        }
                    }
                    for (iv, gr) in input[u].iter_mut().zip(&grad) {
                        *iv += gr;
                    }
                }
            }
        }
    }
    Ok(SkipGramModel { dim, input, output })
}

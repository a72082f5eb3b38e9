//! Second-order biased random walks on affinity-weighted graphs.
//!
//! At vertex `v`, having arrived from `t`, the unnormalized probability of
//! stepping to neighbor `x` is `bias(t, x) * affinity(v, x)` with
//!
//! ```text
//! bias = 1/p                                   if x == t
//!      = 1                                     if (t, x) is an edge with affinity >= mean(x)
//!      = 1/q + (1 - 1/q) * affinity(t, x) / mean(x)   if (t, x) is a weaker edge
//!      = 1/q                                   if (t, x) is not an edge
//! ```
//!
//! where `mean(x)` is the mean affinity over the edges incident to `x`.
//! The first step of a walk has no predecessor and is proportional to
//! affinity alone.

use std::io::Write;
use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::MatchingGraph;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkConfig {
    pub p: f64,
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_vertex: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            p: 1.0,
            q: 1.0,
            walk_length: 80,
            walks_per_vertex: 10,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0) {
            return Err(Error::Config("walk p and q must be positive".into()));
        }
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be at least 2".into()));
        }
        if self.walks_per_vertex == 0 {
            return Err(Error::Config("walks_per_vertex must be at least 1".into()));
        }
        Ok(())
    }
}

/// Undirected weighted graph in the form the sampler needs.
#[derive(Debug, Clone)]
pub struct WalkGraph {
    /// Sorted by neighbor index.
    adjacency: Vec<Vec<(usize, f64)>>,
    mean_affinity: Vec<f64>,
}

impl WalkGraph {
    pub fn from_adjacency(adjacency: Vec<Vec<(usize, f64)>>) -> Self {
        let mean_affinity = adjacency
            .iter()
            .map(|nbrs| {
                if nbrs.is_empty() {
                    0.0
                } else {
                    nbrs.iter().map(|&(_, w)| w).sum::<f64>() / nbrs.len() as f64
                }
            })
            .collect();
        Self {
            adjacency,
            mean_affinity,
        }
    }

    /// Build from an undirected edge list `(a, b, affinity)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(v, _)| v);
        }
        Self::from_adjacency(adj)
    }

    pub fn from_matching_graph(g: &MatchingGraph) -> Self {
        Self::from_adjacency(g.adjacency())
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn edge_affinity(&self, a: usize, b: usize) -> Option<f64> {
        let nbrs = &self.adjacency[a];
        nbrs.binary_search_by_key(&b, |&(v, _)| v).ok().map(|i| nbrs[i].1)
    }

    fn bias(&self, prev: usize, candidate: usize, p: f64, q: f64) -> f64 {
        if candidate == prev {
            return 1.0 / p;
        }
        match self.edge_affinity(prev, candidate) {
            Some(w) => {
                let threshold = self.mean_affinity[candidate];
                if w >= threshold {
                    1.0
                } else {
                    1.0 / q + (1.0 - 1.0 / q) * w / threshold
                }
            }
            None => 1.0 / q,
        }
    }

    /// Unnormalized step weights from `current`, aligned with
    /// `neighbors(current)`.
    pub fn step_weights(&self, prev: Option<usize>, current: usize, p: f64, q: f64) -> Vec<f64> {
        self.adjacency[current]
            .iter()
            .map(|&(x, w)| match prev {
                None => w,
                Some(t) => self.bias(t, x, p, q) * w,
            })
            .collect()
    }

    /// Normalized transition distribution `(next, probability)`.
    pub fn transition_probabilities(&self, prev: Option<usize>, current: usize, p: f64, q: f64) -> Vec<(usize, f64)> {
        let weights = self.step_weights(prev, current, p, q);
        let total: f64 = weights.iter().sum();
        self.adjacency[current]
            .iter()
            .zip(weights)
            .map(|(&(x, _), w)| (x, w / total))
            .collect()
    }

    /// Draw the next vertex, or `None` at a dead end.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        prev: Option<usize>,
        current: usize,
        p: f64,
        q: f64,
    ) -> Option<usize> {
        let nbrs = &self.adjacency[current];
        if nbrs.is_empty() {
            return None;
        }
        let weights = self.step_weights(prev, current, p, q);
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return None;
        }
        let mut target = rng.gen::<f64>() * total;
        for (&(x, _), w) in nbrs.iter().zip(&weights) {
            if target < *w {
                return Some(x);
            }
            target -= w;
        }
        // Floating-point slack lands on the last positive-weight neighbor.
        nbrs.iter()
            .zip(&weights)
            .rev()
            .find(|(_, &w)| w > 0.0)
            .map(|(&(x, _), _)| x)
    }

    /// One walk of at most `cfg.walk_length` vertices starting at `start`.
    pub fn walk_from<R: Rng + ?Sized>(&self, rng: &mut R, start: usize, cfg: &WalkConfig) -> Vec<usize> {
        let mut walk = Vec::with_capacity(cfg.walk_length);
        walk.push(start);
        let mut prev = None;
        let mut current = start;
        while walk.len() < cfg.walk_length {
            match self.sample_step(rng, prev, current, cfg.p, cfg.q) {
                Some(next) => {
                    walk.push(next);
                    prev = Some(current);
                    current = next;
                }
                None => break,
            }
        }
        walk
    }

    /// `walks_per_vertex` walks from every non-isolated vertex, emitted
    /// round by round. Walk `(v, r)` uses its own generator derived from
    /// `(seed, v, r)`.
    pub fn generate_walks(&self, cfg: &WalkConfig) -> Result<Vec<Vec<usize>>> {
        cfg.validate()?;
        let isolated = self.adjacency.iter().filter(|n| n.is_empty()).count();
        if isolated > 0 {
            warn!("{isolated} isolated vertices receive no walks");
        }
        let mut walks = Vec::with_capacity(cfg.walks_per_vertex * (self.len() - isolated));
        for round in 0..cfg.walks_per_vertex {
            for v in 0..self.len() {
                if self.adjacency[v].is_empty() {
                    continue;
                }
                let mut rng = seed::rng(cfg.seed, "walk", &[v as u64, round as u64]);
                walks.push(self.walk_from(&mut rng, v, cfg));
            }
        }
        Ok(walks)
    }
}

/// Walks over the matching graph, as vertex indices of `g`.
pub fn generate_walks(g: &MatchingGraph, cfg: &WalkConfig) -> Result<Vec<Vec<usize>>> {
    WalkGraph::from_matching_graph(g).generate_walks(cfg)
}

/// Write one walk per line with space-separated vertex names.
pub fn write_walk_corpus(g: &MatchingGraph, walks: &[Vec<usize>], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for walk in walks {
        let line: Vec<String> = walk.iter().map(|&v| g.vertices()[v].to_string()).collect();
        writeln!(out, "{}", line.join(" ")).expect("write to Vec");
    }
    fsutil::write_atomic(path, &out)
}

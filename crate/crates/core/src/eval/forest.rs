//! Multi-output random forest over dataset features.
//!
//! Every sample has one rank-class target per model. Splits minimize the sum
//! of per-output Gini impurities; leaves store the mean target vector.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features examined per split; `None` means `ceil(sqrt(F))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(Vec<f64>),
}

#[derive(Debug, Clone)]
struct RankTree {
    nodes: Vec<Node>,
}

impl RankTree {
    fn predict(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankForest {
    trees: Vec<RankTree>,
    n_features: usize,
}

struct Fit<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Vec<u32>],
    n_classes: usize,
    max_features: usize,
    nodes: Vec<Node>,
}

impl Fit<'_> {
    /// Sum over outputs of `n * gini`.
    fn weighted_gini(&self, counts: &[usize], n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let nf = n as f64;
        counts
            .chunks_exact(self.n_classes + 1)
            .map(|c| nf - c.iter().map(|&k| (k * k) as f64).sum::<f64>() / nf)
            .sum()
    }

    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let width = self.n_classes + 1;
        let mut counts = vec![0usize; self.y[0].len() * width];
        for &r in rows {
            for (o, &label) in self.y[r].iter().enumerate() {
                counts[o * width + label as usize] += 1;
            }
        }
        counts
    }

    fn leaf(&mut self, rows: &[usize]) -> usize {
        let outputs = self.y[0].len();
        let mut mean = vec![0.0; outputs];
        for &r in rows {
            for (m, &l) in mean.iter_mut().zip(&self.y[r]) {
                *m += f64::from(l);
            }
        }
        for m in &mut mean {
            *m /= rows.len() as f64;
        }
        self.nodes.push(Node::Leaf(mean));
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> usize {
        let pure = rows.iter().all(|&r| self.y[r] == self.y[rows[0]]);
        if rows.len() < 2 || pure {
            return self.leaf(&rows);
        }
        let n_features = self.x[0].len();
        let width = self.n_classes + 1;
        let parent_counts = self.counts(&rows);
        let parent = self.weighted_gini(&parent_counts, rows.len());
        let mut best: Option<(usize, f64, f64)> = None;
        for f in index::sample(rng, n_features, self.max_features.min(n_features)) {
            let mut order = rows.clone();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0usize; parent_counts.len()];
            for split in 1..order.len() {
                for (o, &label) in self.y[order[split - 1]].iter().enumerate() {
                    left[o * width + label as usize] += 1;
                }
                let (lo, hi) = (self.x[order[split - 1]][f], self.x[order[split]][f]);
                if lo == hi {
                    continue;
                }
                let right: Vec<usize> = parent_counts.iter().zip(&left).map(|(p, l)| p - l).collect();
                let impurity = self.weighted_gini(&left, split) + self.weighted_gini(&right, order.len() - split);
                if impurity < parent - 1e-12 && best.is_none_or(|(_, _, b)| impurity < b) {
                    best = Some((f, 0.5 * (lo + hi), impurity));
                }
            }
        }
        let Some((feature, threshold, _)) = best else {
            return self.leaf(&rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(Vec::new()));
        let left = self.build(l, rng);
        let right = self.build(r, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl RankForest {
    /// Fit on feature rows `x` and per-output rank labels `y` (labels in
    /// `1..=n_classes`).
    pub fn fit(x: &[Vec<f64>], y: &[Vec<u32>], n_classes: usize, params: &ForestParams) -> Result<Self> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(Error::Input(
                "random forest needs at least 2 samples with matching targets".into(),
            ));
        }
        let n_features = x[0].len();
        let outputs = y[0].len();
        if n_features == 0 || x.iter().any(|r| r.len() != n_features) || y.iter().any(|r| r.len() != outputs) {
            return Err(Error::Input("ragged forest inputs".into()));
        }
        if y.iter().flatten().any(|&l| l == 0 || l as usize > n_classes) {
            return Err(Error::Input("forest label out of range".into()));
        }
        let max_features = params
            .max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .max(1);
        let n = x.len();
        let mut trees = Vec::with_capacity(params.n_trees);
        for t in 0..params.n_trees {
            let mut rng = seed::rng(params.seed, "forest-tree", &[t as u64]);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut fit = Fit {
                x,
                y,
                n_classes,
                max_features,
                nodes: Vec::new(),
            };
            fit.build(sample, &mut rng);
            trees.push(RankTree { nodes: fit.nodes });
        }
        Ok(Self { trees, n_features })
    }

    /// Mean of the leaf target vectors over all trees.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::DimMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut acc: Vec<f64> = Vec::new();
        for t in &self.trees {
            let leaf = t.predict(x);
            if acc.is_empty() {
                acc = vec![0.0; leaf.len()];
            }
            for (a, v) in acc.iter_mut().zip(leaf) {
                *a += v;
            }
        }
        let n = self.trees.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_groups() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<Vec<u32>> = (0..20).map(|i| if i < 10 { vec![1, 2] } else { vec![2, 1] }).collect();
        let f = RankForest::fit(&x, &y, 2, &ForestParams::default()).unwrap();
        let low = f.predict(&[2.0, 0.0]).unwrap();
        let high = f.predict(&[17.0, 1.0]).unwrap();
        assert!(low[0] < low[1]);
        assert!(high[0] > high[1]);
    }

    #[test]
    fn constant_targets_are_memorized() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3, -(i as f64)]).collect();
        let y = vec![vec![3, 1, 2]; 6];
        let f = RankForest::fit(&x, &y, 3, &ForestParams::default()).unwrap();
        assert_eq!(f.predict(&[100.0, 5.0]).unwrap(), [3.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert!(RankForest::fit(&[vec![0.0]], &[vec![1]], 1, &ForestParams::default()).is_err());
    }
}

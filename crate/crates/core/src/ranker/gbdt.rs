//! Multiclass gradient-boosted regression trees with softmax log-loss.
//!
//! Each round fits one least-squares tree per class to the residual
//! `onehot(y) - p` and sets leaf values with a single Newton step,
//! `(K - 1) / K * sum(r) / (sum(|r| * (1 - |r|)) + eps)`. Split search runs
//! on quantile bins of each feature; a row goes left when
//! `x <= threshold`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TrainingRow;
use crate::fsutil;
use crate::seed;

pub const GBDT_FORMAT_VERSION: u32 = 1;
pub const LEAF_EPSILON: f64 = 1e-6;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub rounds: usize,
    pub depth: usize,
    pub lr: f64,
    pub seed: u64,
    /// Upper bound on candidate thresholds per feature.
    pub max_bins: usize,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each round.
    pub subsample: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            rounds: 300,
            depth: 4,
            lr: 0.1,
            seed: 0,
            max_bins: 64,
            min_samples_leaf: 1,
            subsample: 1.0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("tree depth must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.max_bins < 2 || self.max_bins > 256 {
            return Err(Error::Config("max_bins must lie in [2, 256]".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config("subsample must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtHeader {
    pub format_version: u32,
    pub rounds: usize,
    pub depth: usize,
    pub lr: f64,
    pub num_classes: usize,
    pub feature_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub header: GbdtHeader,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<Tree>>,
    /// Mean training log-loss before the first round and after each round.
    pub train_loss: Vec<f64>,
}

/// Feature values quantized to bin indices, feature-major.
struct Binned {
    n_rows: usize,
    bins: Vec<Vec<u8>>,
    /// Per feature, `thresholds[j]` separates bin `j` from bin `j + 1`.
    thresholds: Vec<Vec<f64>>,
}

impl Binned {
    fn new(inputs: &[&[f64]], n_features: usize, max_bins: usize) -> Self {
        let n_rows = inputs.len();
        let mut bins = Vec::with_capacity(n_features);
        let mut thresholds = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut values: Vec<f64> = inputs.iter().map(|x| x[f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            let cuts: Vec<f64> = if values.len() <= max_bins {
                values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut cuts: Vec<f64> = (1..max_bins)
                    .map(|k| {
                        let pos = k * values.len() / max_bins;
                        0.5 * (values[pos - 1] + values[pos])
                    })
                    .collect();
                cuts.dedup();
                cuts
            };
            let column = inputs
                .iter()
                .map(|x| cuts.partition_point(|&t| t < x[f]) as u8)
                .collect();
            bins.push(column);
            thresholds.push(cuts);
        }
        Self {
            n_rows,
            bins,
            thresholds,
        }
    }

    fn n_bins(&self, f: usize) -> usize {
        self.thresholds[f].len() + 1
    }
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    out
}

fn mean_log_loss(raw: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for (row, &y) in raw.chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

struct TreeBuilder<'a> {
    binned: &'a Binned,
    residual: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    leaf_scale: f64,
    nodes: Vec<TreeNode>,
    /// Leaf value assigned to each row seen by the builder.
    row_value: Vec<f64>,
    hist_sum: Vec<f64>,
    hist_cnt: Vec<usize>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &i in rows {
            let r = self.residual[i];
            num += r;
            den += r.abs() * (1.0 - r.abs());
        }
        self.leaf_scale * num / (den + LEAF_EPSILON)
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, usize, f64)> {
        let n = rows.len();
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(self.residual[i]), hi.max(self.residual[i]))
        });
        if hi - lo <= MIN_GAIN {
            return None;
        }
        let total: f64 = rows.iter().map(|&i| self.residual[i]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(usize, usize, f64)> = None;
        for f in 0..self.binned.bins.len() {
            let nb = self.binned.n_bins(f);
            if nb < 2 {
                continue;
            }
            let (sums, cnts) = (&mut self.hist_sum[..nb], &mut self.hist_cnt[..nb]);
            sums.iter_mut().for_each(|s| *s = 0.0);
            cnts.iter_mut().for_each(|c| *c = 0);
            let column = &self.binned.bins[f];
            for &i in rows {
                let b = column[i] as usize;
                sums[b] += self.residual[i];
                cnts[b] += 1;
            }
            let (mut left_sum, mut left_n) = (0.0, 0usize);
            for b in 0..nb - 1 {
                left_sum += sums[b];
                left_n += cnts[b];
                let right_n = n - left_n;
                if left_n < self.min_leaf {
                    continue;
                }
                if right_n < self.min_leaf {
                    break;
                }
                if cnts[b] == 0 {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64 - parent;
                // Zero-gain splits are kept: XOR-like targets need one to
                // expose the interaction one level down.
                if gain > -MIN_GAIN && best.is_none_or(|(_, _, g)| gain > g) {
                    best = Some((f, b, gain));
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0 });
        let split = if depth < self.max_depth && rows.len() >= 2 * self.min_leaf {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => {
                let value = self.leaf_value(&rows);
                for &i in &rows {
                    self.row_value[i] = value;
                }
                self.nodes[id] = TreeNode::Leaf { value };
            }
            Some((f, b, _)) => {
                let column = &self.binned.bins[f];
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| column[i] as usize <= b);
                let threshold = self.binned.thresholds[f][b];
                let left = self.build(left_rows, depth + 1);
                let right = self.build(right_rows, depth + 1);
                self.nodes[id] = TreeNode::Split {
                    feature: f,
                    threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

/// Train on labelled rows; labels are 1-based rank classes in
/// `1..=num_classes`.
pub fn train_gbdt(rows: &[TrainingRow], num_classes: usize, params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    let first = rows.first().ok_or_else(|| Error::Input("no training rows".into()))?;
    let n_features = first.input.len();
    let mut labels = Vec::with_capacity(rows.len());
    for r in rows {
        if r.input.len() != n_features {
            return Err(Error::DimMismatch {
                expected: n_features,
                got: r.input.len(),
            });
        }
        match r.label {
            Some(l) if l >= 1 && (l as usize) <= num_classes => labels.push(l as usize - 1),
            Some(l) => return Err(Error::Input(format!("label {l} outside 1..={num_classes}"))),
            None => return Err(Error::Input("training row without a label".into())),
        }
    }
    let mut distinct = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Input(
            "training data must contain at least 2 distinct rank labels".into(),
        ));
    }

    let k = num_classes;
    let n = rows.len();
    let inputs: Vec<&[f64]> = rows.iter().map(|r| r.input.as_slice()).collect();
    let binned = Binned::new(&inputs, n_features, params.max_bins);
    let max_nb = (0..n_features).map(|f| binned.n_bins(f)).max().unwrap_or(1);

    let mut raw = vec![0.0; n * k];
    let mut prob = vec![0.0; n * k];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.rounds);
    let mut train_loss = vec![mean_log_loss(&raw, &labels, k)];
    let leaf_scale = (k as f64 - 1.0) / k as f64;
    let mut rng = seed::rng(params.seed, "gbdt-subsample", &[]);
    let sample_size = ((params.subsample * n as f64).round() as usize).clamp(1, n);

    for _ in 0..params.rounds {
        prob.copy_from_slice(&raw);
        for row in prob.chunks_exact_mut(k) {
            softmax_in_place(row);
        }
        let sample: Vec<usize> = if sample_size == n {
            (0..n).collect()
        } else {
            let mut s: Vec<usize> = rand::seq::index::sample(&mut rng, n, sample_size).into_vec();
            s.sort_unstable();
            s
        };
        let mut round = Vec::with_capacity(k);
        for class in 0..k {
            for i in 0..n {
                let y = if labels[i] == class { 1.0 } else { 0.0 };
                residual[i] = y - prob[i * k + class];
            }
            let mut builder = TreeBuilder {
                binned: &binned,
                residual: &residual,
                max_depth: params.depth,
                min_leaf: params.min_samples_leaf,
                leaf_scale,
                nodes: Vec::new(),
                row_value: vec![0.0; binned.n_rows],
                hist_sum: vec![0.0; max_nb],
                hist_cnt: vec![0; max_nb],
            };
            builder.build(sample.clone(), 0);
            let tree = Tree { nodes: builder.nodes };
            if sample_size == n {
                for i in 0..n {
                    raw[i * k + class] += params.lr * builder.row_value[i];
                }
            } else {
                for i in 0..n {
                    raw[i * k + class] += params.lr * tree.predict(rows[i].input.as_slice());
                }
            }
            round.push(tree);
        }
        trees.push(round);
        train_loss.push(mean_log_loss(&raw, &labels, k));
    }

    Ok(GbdtModel {
        header: GbdtHeader {
            format_version: GBDT_FORMAT_VERSION,
            rounds: params.rounds,
            depth: params.depth,
            lr: params.lr,
            num_classes,
            feature_count: n_features,
            seed: params.seed,
        },
        trees,
        train_loss,
    })
}

impl GbdtModel {
    /// A model with no trees: every prediction is uniform.
    pub fn untrained(num_classes: usize, feature_count: usize, params: &GbdtParams) -> Self {
        Self {
            header: GbdtHeader {
                format_version: GBDT_FORMAT_VERSION,
                rounds: 0,
                depth: params.depth,
                lr: params.lr,
                num_classes,
                feature_count,
                seed: params.seed,
            },
            trees: Vec::new(),
            train_loss: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.header.num_classes
    }

    pub fn raw_scores(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.header.feature_count {
            return Err(Error::DimMismatch {
                expected: self.header.feature_count,
                got: input.len(),
            });
        }
        let mut raw = vec![0.0; self.header.num_classes];
        for round in &self.trees {
            for (s, tree) in raw.iter_mut().zip(round) {
                *s += self.header.lr * tree.predict(input);
            }
        }
        Ok(raw)
    }

    /// Class probabilities; index `k` is rank `k + 1`.
    pub fn predict_rank_scores(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut raw = self.raw_scores(input)?;
        softmax_in_place(&mut raw);
        Ok(raw)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: GbdtModel = fsutil::read_json(path)?;
        if m.header.format_version != GBDT_FORMAT_VERSION {
            return Err(Error::format(path, "unsupported ranker format_version"));
        }
        if m.trees.iter().any(|r| r.len() != m.header.num_classes) {
            return Err(Error::format(path, "round with the wrong number of class trees"));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(input: Vec<f64>, label: u32) -> TrainingRow {
        TrainingRow {
            input,
            label: Some(label),
            model_id: String::new(),
            dataset_id: String::new(),
        }
    }

    fn argmax(p: &[f64]) -> usize {
        p.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap()
    }

    #[test]
    fn learns_xor() {
        let rows = vec![
            row(vec![0.0, 0.0], 1),
            row(vec![1.0, 1.0], 1),
            row(vec![0.0, 1.0], 2),
            row(vec![1.0, 0.0], 2),
        ];
        let params = GbdtParams {
            rounds: 50,
            ..GbdtParams::default()
        };
        let m = train_gbdt(&rows, 2, &params).unwrap();
        for r in &rows {
            let p = m.predict_rank_scores(&r.input).unwrap();
            assert_eq!(argmax(&p) + 1, r.label.unwrap() as usize);
        }
    }

    #[test]
    fn separable_blobs_reach_low_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rows = Vec::new();
        for i in 0..60 {
            let label = if i % 2 == 0 { 1 } else { 2 };
            let c = if label == 1 { -2.0 } else { 2.0 };
            rows.push(row(vec![c + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], label));
        }
        let m = train_gbdt(
            &rows,
            2,
            &GbdtParams {
                rounds: 100,
                ..GbdtParams::default()
            },
        )
        .unwrap();
        assert!(*m.train_loss.last().unwrap() < 0.1);
        for w in m.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn deterministic_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<_> = (0..40)
            .map(|i| row((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), (i % 3) + 1))
            .collect();
        let params = GbdtParams {
            rounds: 20,
            ..GbdtParams::default()
        };
        let a = train_gbdt(&rows, 3, &params).unwrap();
        let b = train_gbdt(&rows, 3, &params).unwrap();
        assert_eq!(a, b);
        let x = [0.1, -0.2, 0.3, 0.0];
        let pa = a.predict_rank_scores(&x).unwrap();
        let pb = b.predict_rank_scores(&x).unwrap();
        assert_eq!(
            pa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            pb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(pa.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn memorizes_duplicated_rows() {
        let mut rows = Vec::new();
        for _ in 0..20 {
            rows.push(row(vec![1.0, 5.0], 3));
        }
        rows.push(row(vec![0.0, 0.0], 1));
        rows.push(row(vec![2.0, 1.0], 2));
        let m = train_gbdt(
            &rows,
            4,
            &GbdtParams {
                rounds: 30,
                ..GbdtParams::default()
            },
        )
        .unwrap();
        assert_eq!(argmax(&m.predict_rank_scores(&[1.0, 5.0]).unwrap()), 2);
    }

    #[test]
    fn untrained_is_uniform() {
        let m = GbdtModel::untrained(5, 3, &GbdtParams::default());
        let p = m.predict_rank_scores(&[1.0, 2.0, 3.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(matches!(m.predict_rank_scores(&[1.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn rejects_degenerate_training_sets() {
        let rows = vec![row(vec![0.0], 1), row(vec![1.0], 1)];
        assert!(train_gbdt(&rows, 2, &GbdtParams::default()).is_err());
        let rows = vec![row(vec![0.0], 1), row(vec![1.0, 2.0], 2)];
        assert!(matches!(
            train_gbdt(&rows, 2, &GbdtParams::default()),
            Err(Error::DimMismatch { .. })
        ));
        let rows = vec![row(vec![0.0], 1), row(vec![1.0], 3)];
        assert!(train_gbdt(&rows, 2, &GbdtParams::default()).is_err());
    }

    #[test]
    fn absent_classes_still_emit_full_distribution() {
        let rows = vec![row(vec![0.0], 1), row(vec![1.0], 2)];
        let m = train_gbdt(
            &rows,
            5,
            &GbdtParams {
                rounds: 10,
                ..GbdtParams::default()
            },
        )
        .unwrap();
        let p = m.predict_rank_scores(&[0.0]).unwrap();
        assert_eq!(p.len(), 5);
        assert!(p[0] > p[2]);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row(vec![0.0, 1.0], 1), row(vec![1.0, 0.0], 2), row(vec![0.5, 0.5], 3)];
        let m = train_gbdt(
            &rows,
            3,
            &GbdtParams {
                rounds: 5,
                ..GbdtParams::default()
            },
        )
        .unwrap();
        let p = dir.path().join("ranker.json");
        m.save(&p).unwrap();
        assert_eq!(GbdtModel::load(&p).unwrap(), m);
    }

    #[test]
    fn subsampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<_> = (0..30)
            .map(|i| row(vec![rng.gen_range(-1.0..1.0)], (i % 2) + 1))
            .collect();
        let params = GbdtParams {
            rounds: 5,
            subsample: 0.5,
            seed: 3,
            ..GbdtParams::default()
        };
        assert_eq!(
            train_gbdt(&rows, 2, &params).unwrap(),
            train_gbdt(&rows, 2, &params).unwrap()
        );
    }
}

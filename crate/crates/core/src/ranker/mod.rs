//! Rank labels, the rank-class predictor, and model ordering.

pub mod gbdt;
mod labels;

use std::cmp::Ordering;
use std::collections::BTreeMap;

pub use gbdt::{train_gbdt, GbdtModel, GbdtParams};
pub use labels::make_rank_labels;

/// Expected rank `sum_k k * p_k` of a distribution over ranks `1..=M`.
pub fn expected_rank(dist: &[f64]) -> f64 {
    dist.iter().enumerate().map(|(k, p)| (k + 1) as f64 * p).sum()
}

// Quantized so that round-off does not reorder equal keys.
fn grid(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

/// Order models best first: ascending expected rank, then descending
/// probability of rank 1, then model id.
pub fn select_best(dists: &BTreeMap<String, Vec<f64>>) -> Vec<String> {
    let mut keyed: Vec<(&String, i64, i64)> = dists
        .iter()
        .map(|(m, p)| (m, grid(expected_rank(p)), grid(p.first().copied().unwrap_or(0.0))))
        .collect();
    keyed.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| b.2.cmp(&a.2)).then_with(|| a.0.cmp(b.0)));
    keyed.into_iter().map(|(m, _, _)| m.clone()).collect()
}

/// Compare two `(model, expected rank)` entries the way [`select_best`] does
/// when only expected ranks are known.
pub fn compare_expected(a: (&str, f64), b: (&str, f64)) -> Ordering {
    grid(a.1).cmp(&grid(b.1)).then_with(|| a.0.cmp(b.0))
}

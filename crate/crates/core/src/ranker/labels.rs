use std::collections::BTreeMap;

use crate::perf::PerfTable;

/// Rank of every `(model, dataset)` entry among the models scored on that
/// dataset: 1 for the lowest score, ties broken by the score rounded to
/// 1e-6 and then by model id.
pub fn make_rank_labels(perf: &PerfTable) -> BTreeMap<(String, String), u32> {
    let mut labels = BTreeMap::new();
    for d in perf.datasets() {
        for (rank, m) in perf.true_order(d).into_iter().enumerate() {
            labels.insert((m, d.to_string()), rank as u32 + 1);
        }
    }
    labels
}

//! Selection quality metrics.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::perf::{score_key, PerfTable};

/// Fraction of datasets whose selected model is the true best.
pub fn metric_osr(selections: &BTreeMap<String, String>, truth: &PerfTable) -> Result<f64> {
    if selections.is_empty() {
        return Err(Error::Input("no selections to score".into()));
    }
    let mut hits = 0usize;
    for (d, m) in selections {
        let best = truth
            .best_model(d)
            .ok_or_else(|| Error::Input(format!("no truth scores for dataset {d}")))?;
        if &best == m {
            hits += 1;
        }
    }
    Ok(hits as f64 / selections.len() as f64)
}

/// Weighted Kendall correlation between a predicted and a true ordering
/// (both best first), with additive hyperbolic weights on the true ranks:
/// `w_ij = 1 / (r_i + 1) + 1 / (r_j + 1)` for zero-based ranks `r`.
pub fn metric_weighted_kendall(pred_order: &[String], true_order: &[String]) -> Result<f64> {
    let n = true_order.len();
    if n < 2 {
        return Err(Error::Input("weighted Kendall needs at least 2 items".into()));
    }
    if pred_order.len() != n {
        return Err(Error::Input("orderings have different lengths".into()));
    }
    let pred_pos: HashMap<&str, usize> = pred_order.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    if pred_pos.len() != n {
        return Err(Error::Input("predicted ordering has duplicates".into()));
    }
    let positions = true_order
        .iter()
        .map(|m| {
            pred_pos
                .get(m.as_str())
                .copied()
                .ok_or_else(|| Error::Input(format!("{m} missing from the predicted ordering")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = 1.0 / (i as f64 + 1.0) + 1.0 / (j as f64 + 1.0);
            let c = if positions[i] < positions[j] { 1.0 } else { -1.0 };
            num += w * c;
            den += w;
        }
    }
    Ok(num / den)
}

/// Model with the lowest mean score over all datasets it was scored on
/// (ties by id).
pub fn best_on_average(truth: &PerfTable) -> Option<String> {
    mean_scores(truth)
        .into_iter()
        .min_by(|a, b| score_key(a.1).cmp(&score_key(b.1)).then_with(|| a.0.cmp(&b.0)))
        .map(|(m, _)| m)
}

/// Mean score per model, ordered by model id.
pub fn mean_scores(truth: &PerfTable) -> Vec<(String, f64)> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for ((m, _), &s) in &truth.entries {
        let e = acc.entry(m.as_str()).or_default();
        e.0 += s;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(m, (s, n))| (m.to_string(), s / n as f64))
        .collect()
}

fn score(truth: &PerfTable, m: &str, d: &str) -> Result<f64> {
    truth
        .get(m, d)
        .ok_or_else(|| Error::Input(format!("missing truth score for ({m}, {d})")))
}

/// Mean gap between each selection and the best-on-average model.
pub fn metric_o2b(selections: &BTreeMap<String, String>, truth: &PerfTable) -> Result<f64> {
    let reference = best_on_average(truth).ok_or_else(|| Error::Input("empty truth table".into()))?;
    if selections.is_empty() {
        return Err(Error::Input("no selections to score".into()));
    }
    let mut total = 0.0;
    for (d, m) in selections {
        total += score(truth, m, d)? - score(truth, &reference, d)?;
    }
    Ok(total / selections.len() as f64)
}

/// Mean gap between each selection and its dataset's best score.
pub fn metric_o2o(selections: &BTreeMap<String, String>, truth: &PerfTable) -> Result<f64> {
    if selections.is_empty() {
        return Err(Error::Input("no selections to score".into()));
    }
    let mut total = 0.0;
    for (d, m) in selections {
        let best = truth
            .min_score(d)
            .ok_or_else(|| Error::Input(format!("no truth scores for dataset {d}")))?;
        total += score(truth, m, d)? - best;
    }
    Ok(total / selections.len() as f64)
}

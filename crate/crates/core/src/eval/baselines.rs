//! Reference selectors that do not use the matching graph.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::eval::forest::{ForestParams, RankForest};
use crate::perf::{score_key, PerfTable};

fn sort_by_score(mut scored: Vec<(String, f64)>) -> Vec<String> {
    scored.sort_by(|a, b| score_key(a.1).cmp(&score_key(b.1)).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().map(|(m, _)| m).collect()
}

/// Models by ascending mean score over the datasets in `truth`.
pub fn baseline_overall(truth_minus_target: &PerfTable) -> Result<Vec<String>> {
    let means = crate::eval::metrics::mean_scores(truth_minus_target);
    if means.is_empty() {
        return Err(Error::Input("no training scores for the overall baseline".into()));
    }
    Ok(sort_by_score(means))
}

/// Models by ascending pre-fine-tuning score on `target`. Models without a
/// score there fall back to their mean initial score over all datasets.
pub fn baseline_initial(perf: &PerfTable, models: &[String], target: &str) -> Result<Vec<String>> {
    let initial = perf
        .initial
        .as_ref()
        .ok_or_else(|| Error::Input("no initial scores for the initial baseline".into()))?;
    let mut scored = Vec::with_capacity(models.len());
    for m in models {
        let s = match initial.get(&(m.clone(), target.to_string())) {
            Some(&s) => s,
            None => {
                let all: Vec<f64> = initial.iter().filter(|((mm, _), _)| mm == m).map(|(_, &s)| s).collect();
                if all.is_empty() {
                    return Err(Error::Input(format!("no initial scores for model {m}")));
                }
                all.iter().sum::<f64>() / all.len() as f64
            }
        };
        scored.push((m.clone(), s));
    }
    Ok(sort_by_score(scored))
}

/// Random forest over dataset features predicting each model's rank;
/// models are ordered by their averaged predicted rank.
///
/// `train_ranks[i][j]` is the rank of `models[j]` on training dataset `i`.
pub fn baseline_direct(
    train_feats: &[Vec<f64>],
    train_ranks: &[Vec<u32>],
    models: &[String],
    query_feat: &[f64],
    seed: u64,
) -> Result<Vec<String>> {
    if train_feats.len() < 2 {
        return Err(Error::Input(
            "direct baseline needs at least 2 training datasets".into(),
        ));
    }
    if train_ranks.iter().any(|r| r.len() != models.len()) {
        return Err(Error::Input("rank vectors do not match the zoo".into()));
    }
    let params = ForestParams {
        seed,
        ..ForestParams::default()
    };
    let forest = RankForest::fit(train_feats, train_ranks, models.len(), &params)?;
    let predicted = forest.predict(query_feat)?;
    Ok(sort_by_score(models.iter().cloned().zip(predicted).collect()))
}

/// Per-model rank vectors of the given datasets, in `models` order.
pub fn rank_vectors(truth: &PerfTable, models: &[String], datasets: &[String]) -> Result<Vec<Vec<u32>>> {
    let labels = crate::ranker::make_rank_labels(truth);
    datasets
        .iter()
        .map(|d| {
            models
                .iter()
                .map(|m| {
                    labels
                        .get(&(m.clone(), d.clone()))
                        .copied()
                        .ok_or_else(|| Error::Input(format!("missing score for ({m}, {d})")))
                })
                .collect()
        })
        .collect()
}

/// Selections of the best-on-average model for every dataset of `truth`.
pub fn overall_selections(truth: &PerfTable) -> Result<BTreeMap<String, String>> {
    let best = baseline_overall(truth)?.remove(0);
    Ok(truth
        .datasets()
        .into_iter()
        .map(|d| (d.to_string(), best.clone()))
        .collect())
}

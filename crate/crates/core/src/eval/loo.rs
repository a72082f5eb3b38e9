//! Leave-one-dataset-out evaluation and the sparsity and ablation sweeps.

use std::collections::BTreeMap;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embed::embed_graph;
use crate::error::{Error, Result};
use crate::eval::baselines::{baseline_direct, baseline_initial, baseline_overall, rank_vectors};
use crate::eval::report::{EvalReport, Method, ReportConfig, SparsityPoint};
use crate::features::dataset_feature;
use crate::frechet::{DatasetDistance, Frechet};
use crate::graph::{MatchingGraph, SimilarityTable};
use crate::pipeline::{
    fit_ranker, graph_perf, predict_dataset, training_rows, Mode, ModelFeatures, PipelineConfig, RowBuilder,
};
use crate::ranker::select_best;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LooOptions {
    pub method: Method,
    pub mode: Mode,
    /// Fraction of training performance edges dropped in every fold.
    pub sparsity: f64,
    pub seed: u64,
    pub pipeline: PipelineConfig,
}

/// Fold-independent state: similarities and model features are computed
/// once and shared by every fold.
pub struct LooSetup<'a> {
    pub corpus: &'a Corpus,
    pub sims: SimilarityTable,
    pub models: ModelFeatures,
    pub model_ids: Vec<String>,
    pub datasets: Vec<String>,
}

impl<'a> LooSetup<'a> {
    pub fn new(corpus: &'a Corpus) -> Result<Self> {
        Self::with_distance(corpus, &Frechet)
    }

    pub fn with_distance(corpus: &'a Corpus, distance: &dyn DatasetDistance) -> Result<Self> {
        corpus.validate()?;
        if corpus.stats.len() < 3 {
            return Err(Error::Input("leave-one-out needs at least 3 datasets".into()));
        }
        Ok(Self {
            corpus,
            sims: SimilarityTable::compute(&corpus.stats, distance)?,
            models: ModelFeatures::fit(&corpus.cards)?,
            model_ids: corpus.model_ids(),
            datasets: corpus.dataset_ids(),
        })
    }
}

/// What one fold trained on, for leakage auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldTrace {
    pub target: String,
    /// `(model, dataset)` of every labelled training row.
    pub training_rows: Vec<(String, String)>,
    /// Number of performance edges in the fold's graph touching the target.
    pub target_performance_edges: usize,
}

fn fold_graph(setup: &LooSetup<'_>, target: &str, fold: u64, opts: &LooOptions) -> Result<MatchingGraph> {
    let train = setup.corpus.perf.without_dataset(target);
    let g = MatchingGraph::from_similarities(&train, &setup.sims, &setup.model_ids)?;
    if opts.sparsity > 0.0 {
        g.drop_performance_edges(opts.sparsity, seed::derive(opts.seed, "sparsity", &[fold]))
    } else {
        Ok(g)
    }
}

fn match_and_choose_fold(
    setup: &LooSetup<'_>,
    target: &str,
    fold: u64,
    opts: &LooOptions,
) -> Result<(Vec<String>, FoldTrace)> {
    let corpus = setup.corpus;
    let g = fold_graph(setup, target, fold, opts)?;
    let perf = graph_perf(&g, &corpus.perf)?;
    let (walk, sgns, gbdt_params) = opts.pipeline.seeded(opts.seed, &[fold]);
    let embedding = embed_graph(&g, &walk, &sgns)?;
    let builder = RowBuilder::new(&setup.models, &embedding, setup.sims.dim, opts.mode);
    let rows = training_rows(&builder, &perf, &corpus.stats)?;
    if rows.iter().any(|r| r.dataset_id == target) {
        return Err(Error::Input(format!(
            "fold for {target} would train on its own performance"
        )));
    }
    let gbdt = fit_ranker(&rows, setup.model_ids.len(), builder.layout.width(), &gbdt_params)?;
    let target_stats = &corpus.stats[target];
    let dists = predict_dataset(&gbdt, &builder, &setup.model_ids, target, target_stats)?;
    let trace = FoldTrace {
        target: target.to_string(),
        training_rows: rows
            .iter()
            .map(|r| (r.model_id.clone(), r.dataset_id.clone()))
            .collect(),
        target_performance_edges: g.performance_pairs().iter().filter(|(_, d)| d == target).count(),
    };
    debug!("fold {fold} ({target}): {} training rows", rows.len());
    Ok((select_best(&dists), trace))
}

fn baseline_fold(setup: &LooSetup<'_>, target: &str, fold: u64, opts: &LooOptions) -> Result<Vec<String>> {
    let corpus = setup.corpus;
    match opts.method {
        Method::Overall => baseline_overall(&corpus.perf.without_dataset(target)),
        Method::Initial => baseline_initial(&corpus.perf, &setup.model_ids, target),
        Method::Direct => {
            let train: Vec<String> = setup.datasets.iter().filter(|d| *d != target).cloned().collect();
            let feats: Vec<Vec<f64>> = train.iter().map(|d| dataset_feature(&corpus.stats[d])).collect();
            let ranks = rank_vectors(&corpus.perf, &setup.model_ids, &train)?;
            let query = dataset_feature(&corpus.stats[target]);
            baseline_direct(
                &feats,
                &ranks,
                &setup.model_ids,
                &query,
                seed::derive(opts.seed, "direct", &[fold]),
            )
        }
        Method::MatchAndChoose => unreachable!("handled by the graph pipeline"),
    }
}

/// Leave-one-out run that also returns each fold's training trace
/// (empty traces for baselines, which train no predictor).
pub fn run_loo_traced(setup: &LooSetup<'_>, opts: &LooOptions) -> Result<(EvalReport, Vec<FoldTrace>)> {
    opts.pipeline.validate()?;
    if !(0.0..=1.0).contains(&opts.sparsity) {
        return Err(Error::Config(format!(
            "sparsity fraction must lie in [0, 1], got {}",
            opts.sparsity
        )));
    }
    let mut orders = BTreeMap::new();
    let mut traces = Vec::new();
    for (fold, target) in setup.datasets.iter().enumerate() {
        let fold = fold as u64;
        let order = if opts.method == Method::MatchAndChoose {
            let (order, trace) = match_and_choose_fold(setup, target, fold, opts)?;
            traces.push(trace);
            order
        } else {
            baseline_fold(setup, target, fold, opts)?
        };
        orders.insert(target.clone(), order);
    }
    let config = ReportConfig {
        method: opts.method,
        mode: opts.mode,
        seed: opts.seed,
        sparsity_fraction: opts.sparsity,
    };
    Ok((EvalReport::assemble(config, orders, &setup.corpus.perf)?, traces))
}

pub fn run_loo(setup: &LooSetup<'_>, opts: &LooOptions) -> Result<EvalReport> {
    run_loo_traced(setup, opts).map(|(r, _)| r)
}

/// Mean OSR of full leave-one-out runs for every fraction and seed.
pub fn run_sparsity(
    setup: &LooSetup<'_>,
    opts: &LooOptions,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<SparsityPoint>> {
    if seeds.is_empty() {
        return Err(Error::Config("sparsity sweep needs at least one seed".into()));
    }
    fractions
        .iter()
        .map(|&fraction| {
            let per_seed = seeds
                .iter()
                .map(|&seed| {
                    let o = LooOptions {
                        sparsity: fraction,
                        seed,
                        ..opts.clone()
                    };
                    run_loo(setup, &o).map(|r| r.aggregates.osr)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SparsityPoint::from_runs(fraction, per_seed))
        })
        .collect()
}

/// Leave-one-out run with the given input segments masked.
pub fn run_ablation(setup: &LooSetup<'_>, opts: &LooOptions, mode: Mode) -> Result<EvalReport> {
    let o = LooOptions {
        method: Method::MatchAndChoose,
        mode,
        ..opts.clone()
    };
    run_loo(setup, &o)
}

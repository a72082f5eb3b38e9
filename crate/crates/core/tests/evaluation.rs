use std::collections::BTreeMap;

use matchpick::corpus::Corpus;
use matchpick::eval::baselines::overall_selections;
use matchpick::eval::metrics::best_on_average;
use matchpick::eval::{
    metric_o2b, metric_o2o, metric_osr, metric_weighted_kendall, run_ablation, run_loo, run_loo_traced, run_sparsity,
    LooOptions, LooSetup, Method,
};
use matchpick::perf::PerfTable;
use matchpick::pipeline::{Mode, PipelineConfig};
use matchpick::synth::{generate_benchmark, SynthConfig};
use proptest::prelude::*;

fn small_corpus(seed: u64) -> Corpus {
    generate_benchmark(&SynthConfig {
        n_models: 5,
        n_datasets: 8,
        n_clusters: 2,
        emb_dim: 4,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
    .corpus
}

fn tiny() -> PipelineConfig {
    serde_json::from_str(
        r#"{"walk":{"walk_length":10,"walks_per_vertex":4},"sgns":{"emb_dim":8,"epochs":1},"gbdt":{"rounds":15}}"#,
    )
    .unwrap()
}

fn opts(seed: u64) -> LooOptions {
    LooOptions {
        seed,
        pipeline: tiny(),
        ..LooOptions::default()
    }
}

#[test]
fn folds_never_train_on_the_held_out_dataset() {
    let corpus = small_corpus(1);
    let setup = LooSetup::new(&corpus).unwrap();
    for sparsity in [0.0, 0.5] {
        let (report, traces) = run_loo_traced(&setup, &LooOptions { sparsity, ..opts(2) }).unwrap();
        assert_eq!(traces.len(), 8);
        assert_eq!(report.per_dataset.len(), 8);
        for t in &traces {
            assert_eq!(t.target_performance_edges, 0);
            assert!(t.training_rows.iter().all(|(_, d)| *d != t.target));
            assert!(!t.training_rows.is_empty());
        }
    }
}

#[test]
fn baselines_record_no_traces() {
    let corpus = small_corpus(1);
    let setup = LooSetup::new(&corpus).unwrap();
    let (_, traces) = run_loo_traced(
        &setup,
        &LooOptions {
            method: Method::Overall,
            ..opts(0)
        },
    )
    .unwrap();
    assert!(traces.is_empty());
}

#[test]
fn zero_sparsity_and_both_mode_match_plain_loo() {
    let corpus = small_corpus(2);
    let setup = LooSetup::new(&corpus).unwrap();
    let plain = run_loo(&setup, &opts(5)).unwrap();
    let sweep = run_sparsity(&setup, &opts(5), &[0.0], &[5]).unwrap();
    assert_eq!(sweep[0].per_seed, vec![plain.aggregates.osr]);
    let both = run_ablation(&setup, &opts(5), Mode::Both).unwrap();
    assert_eq!(both, plain);
}

#[test]
fn full_sparsity_falls_back_to_id_order() {
    let corpus = small_corpus(3);
    let setup = LooSetup::new(&corpus).unwrap();
    let report = run_loo(
        &setup,
        &LooOptions {
            sparsity: 1.0,
            ..opts(0)
        },
    )
    .unwrap();
    let ids = corpus.model_ids();
    for r in &report.per_dataset {
        assert_eq!(r.predicted_order, ids);
    }
    let hits = corpus
        .dataset_ids()
        .iter()
        .filter(|d| corpus.perf.best_model(d).as_deref() == Some(ids[0].as_str()))
        .count();
    assert_eq!(report.aggregates.osr, hits as f64 / 8.0);
}

#[test]
fn ablation_modes_produce_full_reports() {
    let corpus = small_corpus(4);
    let setup = LooSetup::new(&corpus).unwrap();
    for mode in [Mode::FeaturesOnly, Mode::GraphOnly] {
        let r = run_ablation(&setup, &opts(1), mode).unwrap();
        assert_eq!(r.config.mode, mode);
        assert_eq!(r.config.method, Method::MatchAndChoose);
        for d in &r.per_dataset {
            assert_eq!(d.predicted_order.len(), 5);
        }
    }
}

#[test]
fn loo_reports_are_reproducible() {
    let corpus = small_corpus(5);
    let setup = LooSetup::new(&corpus).unwrap();
    for method in [Method::MatchAndChoose, Method::Direct] {
        let o = LooOptions { method, ..opts(8) };
        let a = serde_json::to_string(&run_loo(&setup, &o).unwrap()).unwrap();
        let b = serde_json::to_string(&run_loo(&setup, &o).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn loo_needs_three_datasets() {
    let mut corpus = small_corpus(0);
    let keep: Vec<String> = corpus.dataset_ids().into_iter().take(2).collect();
    corpus.stats.retain(|d, _| keep.contains(d));
    let mut perf = PerfTable::new();
    for m in corpus.model_ids() {
        for d in &keep {
            perf.insert(&m, d, corpus.perf.get(&m, d).unwrap());
        }
    }
    corpus.perf = perf;
    assert!(LooSetup::new(&corpus).is_err());
}

#[test]
fn sparsity_fraction_out_of_range_is_rejected() {
    let corpus = small_corpus(0);
    let setup = LooSetup::new(&corpus).unwrap();
    assert!(run_loo(
        &setup,
        &LooOptions {
            sparsity: 1.5,
            ..opts(0)
        }
    )
    .is_err());
}

fn table(scores: &[Vec<u8>]) -> PerfTable {
    let mut t = PerfTable::new();
    for (j, row) in scores.iter().enumerate() {
        for (i, s) in row.iter().enumerate() {
            t.insert(&format!("m{i}"), &format!("d{j}"), *s as f64 * 0.25);
        }
    }
    t
}

fn tables() -> impl Strategy<Value = (PerfTable, Vec<usize>)> {
    (2usize..6, 1usize..8).prop_flat_map(|(m, d)| {
        (
            prop::collection::vec(prop::collection::vec(0u8..12, m), d),
            prop::collection::vec(0..m, d),
        )
            .prop_map(|(rows, picks)| (table(&rows), picks))
    })
}

proptest! {
    #[test]
    fn overall_osr_is_the_share_of_datasets_it_wins((truth, _) in tables()) {
        let sel = overall_selections(&truth).unwrap();
        let best = best_on_average(&truth).unwrap();
        let wins = truth.datasets().into_iter().filter(|d| truth.best_model(d).as_deref() == Some(best.as_str())).count();
        prop_assert_eq!(metric_osr(&sel, &truth).unwrap(), wins as f64 / truth.datasets().len() as f64);
        prop_assert_eq!(metric_o2b(&sel, &truth).unwrap(), 0.0);
    }

    #[test]
    fn o2o_bounds_o2b((truth, picks) in tables()) {
        let sel: BTreeMap<String, String> = truth
            .datasets()
            .into_iter()
            .zip(&picks)
            .map(|(d, &i)| (d.to_string(), format!("m{i}")))
            .collect();
        let o2o = metric_o2o(&sel, &truth).unwrap();
        let o2b = metric_o2b(&sel, &truth).unwrap();
        prop_assert!(o2o >= 0.0);
        prop_assert!(o2b <= o2o + 1e-12);
    }

    #[test]
    fn kendall_reaches_one_only_on_agreement(perm in Just((0..6).map(|i| format!("m{i}")).collect::<Vec<_>>()).prop_shuffle()) {
        let truth: Vec<String> = (0..6).map(|i| format!("m{i}")).collect();
        let t = metric_weighted_kendall(&perm, &truth).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&t));
        prop_assert_eq!((t - 1.0).abs() < 1e-12, perm == truth);
    }
}

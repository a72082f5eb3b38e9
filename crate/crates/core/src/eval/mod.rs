//! Metrics, baselines and the leave-one-out harness.

pub mod baselines;
pub mod forest;
pub mod loo;
pub mod metrics;
pub mod report;

pub use baselines::{baseline_direct, baseline_initial, baseline_overall};
pub use loo::{run_ablation, run_loo, run_loo_traced, run_sparsity, FoldTrace, LooOptions, LooSetup};
pub use metrics::{metric_o2b, metric_o2o, metric_osr, metric_weighted_kendall};
pub use report::{sparsity_tsv, EvalReport, Method, SparsityPoint};

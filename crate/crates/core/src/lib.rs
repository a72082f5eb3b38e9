//! Pretrained model selection by matching a target dataset into a graph of
//! known model and dataset results.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod frechet;
pub mod fsutil;
pub mod graph;
pub mod perf;
pub mod pipeline;
pub mod ranker;
pub mod seed;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorClass, Result};

//! Multi-task streaming histogram publication under w-event local
//! differential privacy.
//!
//! The crate covers the OUE frequency oracle, private binary trees with
//! range decomposition, the bias-corrected dissimilarity estimator, optimal
//! budget allocation over a sliding window, adaptive tree construction with
//! grouping and smoothing, a budget-free query engine, four baseline
//! mechanisms, and an experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod allocator;
pub mod baselines;
pub mod budget;
pub mod dissimilarity;
pub mod domain;
pub mod dump;
pub mod error;
pub mod eval;
pub mod grid;
pub mod ingest;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod query;
pub mod seed;
pub mod synth;
pub mod tree;

pub use domain::{Histogram, HistogramBasis, Report, StreamBatch, StreamDataset, ValueDomain};
pub use error::{Error, Result};
pub use oracle::{oue_variance, ExactOracle, FrequencyOracle, Oue, OueParams};
pub use pipeline::{run_method, Method, RunConfig, RunOutput};
pub use tree::{minimum_cover, PrivateTree, Provenance};

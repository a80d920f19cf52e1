//! Sparse co-expression network recovery.
//!
//! Pairwise Pearson correlations are Fisher-transformed into weights, a
//! three-component mixture (a normal null plus positive and negative log-normal
//! components) is fitted to them by EM, and edges are called from the fitted
//! posteriors under one of several decision rules. A synthetic network generator
//! and a replicated evaluation harness sit alongside.
//!
//! ```
//! use coexnet::prelude::*;
//!
//! let config = NetworkConfig { null_sd: 0.0, block_size: Some(20), ..NetworkConfig::new(Family::Complete, 80, 50) };
//! let sim = simulate(&config.with_seed(1))?;
//! let weights = all_weights(&sim.expr)?;
//! let fit = em_fit(&weights, 50, None, &EmOptions::default())?;
//! let thresholds = thresholds_by_fdr(&fit.params, 0.05)?;
//! let stream = WeightStream::new(&sim.expr, DEFAULT_BLOCK_SIZE)?;
//! let decisions = decide_edges(stream, 80, &fit.params, &thresholds)?;
//! assert!(decisions.graph.n_edges() > 0);
//! # Ok::<(), coexnet::error::Error>(())
//! ```

pub mod corr;
pub mod decision;
pub mod error;
pub mod expr_io;
pub mod graph;
pub mod harness;
pub mod mixture;
pub mod netgen;
pub mod numeric;

pub use error::{Error, ErrorKind, Result};

/// The names most programs need.
pub mod prelude {
    pub use crate::corr::{all_weights, fisher_z, pearson, WeightBatch, WeightStream, DEFAULT_BLOCK_SIZE};
    pub use crate::decision::{
        classify, decide_edges, decide_edges_with, thresholds_by_fdr, thresholds_by_ratio, thresholds_by_type1,
        Component, Rule, Thresholds,
    };
    pub use crate::expr_io::{parse_expression, EdgeListWriter, ExpressionMatrix, ParseOptions};
    pub use crate::graph::SparseGraph;
    pub use crate::harness::{run_experiment, score, ExperimentOptions, TruthKind};
    pub use crate::mixture::{em_fit, fit_subsampled, EmOptions, FitReport, L2NParams};
    pub use crate::netgen::{simulate, Family, NetworkConfig};
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/weights.md")]
    mod weights {}
    #[doc = include_str!("../../../book/src/mixture.md")]
    mod mixture {}
    #[doc = include_str!("../../../book/src/decisions.md")]
    mod decisions {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

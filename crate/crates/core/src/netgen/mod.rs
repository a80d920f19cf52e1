//! Synthetic networks and expression data.
//!
//! Two kinds of generator share one config type. The mixture-model families
//! (`complete`, `ar`, `two_blocks`, `two_neg_blocks`) draw Fisher weights directly and
//! map them to correlations with `tanh`. The sparse-precision families (`random`,
//! `hub`, `band`, `scale_free`, `overlapped_cluster`) build a precision matrix from the
//! adjacency and invert it.

mod adjacency;
mod config;
mod cov;
mod weights;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adjacency::{gen_adjacency, group_sizes, overlapped_groups};
pub use config::{Family, NetworkConfig};
pub use cov::{
    adjacency_to_cov, components, precision_matrix, repair_correlation, sample_mvn, truth_by_cov_threshold,
    weights_to_cov, Block, BlockMatrix, RepairReport, REPAIR_ACCEPT, REPAIR_EPS, REPAIR_MAX_PASSES,
};
pub use weights::{gen_weights_l2n, is_negative_edge};

use crate::error::Result;
use crate::expr_io::ExpressionMatrix;
use crate::graph::SparseGraph;

/// The network behind a simulated dataset.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub adjacency: SparseGraph,
    pub true_cov: Option<BlockMatrix>,
    /// Edge count over the number of pairs.
    pub sparsity: f64,
    /// Fraction of pairs that are positive edges.
    pub p1: f64,
    /// Fraction of pairs that are negative edges.
    pub p2: f64,
    pub repair: Option<RepairReport>,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub truth: GroundTruth,
    pub expr: ExpressionMatrix,
}

// Independent streams of the config seed.
const STREAM_ADJACENCY: u64 = 1;
const STREAM_WEIGHTS: u64 = 2;
const STREAM_SAMPLES: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seed of replicate `r` under a master seed.
pub fn replicate_seed(master: u64, r: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r);
    rng.next_u64()
}

/// Adjacency plus true correlation matrix for a config.
pub fn ground_truth(config: &NetworkConfig) -> Result<GroundTruth> {
    config.validate()?;
    let adjacency = gen_adjacency(config, &mut stream(config.seed, STREAM_ADJACENCY))?;
    let n = config.n_genes;
    let k = (n * (n - 1) / 2) as f64;
    let sparsity = adjacency.sparsity();
    if config.family.is_l2n() {
        let w = gen_weights_l2n(config, &adjacency, &mut stream(config.seed, STREAM_WEIGHTS))?;
        let negative = adjacency
            .edges()
            .iter()
            .filter(|&&(a, b)| is_negative_edge(config, a as usize, b as usize))
            .count();
        let (cov, repair) = weights_to_cov(&w)?;
        if repair.passes > 0 {
            log::info!("repaired tanh(W) in {} passes, max change {:.3e}", repair.passes, repair.max_abs_change);
        }
        Ok(GroundTruth {
            p1: (adjacency.n_edges() - negative) as f64 / k,
            p2: negative as f64 / k,
            adjacency,
            true_cov: Some(cov),
            sparsity,
            repair: Some(repair),
        })
    } else {
        let cov = adjacency_to_cov(&adjacency, config.v, config.u)?;
        let negative =
            adjacency.edges().iter().filter(|&&(a, b)| cov.get(a as usize, b as usize) < 0.0).count();
        Ok(GroundTruth {
            p1: (adjacency.n_edges() - negative) as f64 / k,
            p2: negative as f64 / k,
            adjacency,
            true_cov: Some(cov),
            sparsity,
            repair: None,
        })
    }
}

/// Ground truth and an expression matrix drawn from it.
pub fn simulate(config: &NetworkConfig) -> Result<Simulation> {
    let truth = ground_truth(config)?;
    let cov = truth.true_cov.as_ref().expect("ground truth carries its covariance");
    let sample_seed = stream(config.seed, STREAM_SAMPLES).next_u64();
    let expr = sample_mvn(cov, config.n_samples, sample_seed)?;
    Ok(Simulation { truth, expr })
}

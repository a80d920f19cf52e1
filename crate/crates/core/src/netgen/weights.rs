use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{Family, NetworkConfig};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;

fn log_normal<R: Rng + ?Sized>(rng: &mut R, theta: f64, kappa_sq: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (theta + kappa_sq.sqrt() * z).exp()
}

/// Whether the true edge `(a, b)` carries a negative weight.
pub fn is_negative_edge(config: &NetworkConfig, a: usize, b: usize) -> bool {
    config.family == Family::TwoNegBlocks && (a < config.s()) != (b < config.s())
}

/// Symmetric weight matrix with zero diagonal: log-normal magnitudes on the true
/// edges, `N(0, null_sd^2)` elsewhere.
///
/// Edge weights are drawn first, in pair order, then the null entries. For `ar` the
/// edge draws are sorted and dealt out by diagonal: the largest `S-1` values go,
/// shuffled, to the first off-diagonal, the next `S-2` to the second, and so on.
pub fn gen_weights_l2n<R: Rng + ?Sized>(
    config: &NetworkConfig,
    truth: &SparseGraph,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !config.family.is_l2n() {
        return Err(Error::invalid(format!("{} is not generated from mixture weights", config.family.name())));
    }
    let n = config.n_genes;
    let mut w = DMatrix::zeros(n, n);
    let set = |w: &mut DMatrix<f64>, a: usize, b: usize, v: f64| {
        w[(a, b)] = v;
        w[(b, a)] = v;
    };
    if config.family == Family::Ar {
        let s = config.s();
        let mut draws: Vec<f64> =
            (0..s * (s - 1) / 2).map(|_| log_normal(rng, config.theta1, config.kappa1_sq)).collect();
        draws.sort_by(|x, y| y.total_cmp(x));
        let mut rest = &draws[..];
        for d in 1..s {
            let (band, tail) = rest.split_at(s - d);
            let mut band = band.to_vec();
            band.shuffle(rng);
            for (i, v) in band.into_iter().enumerate() {
                set(&mut w, i, i + d, v);
            }
            rest = tail;
        }
    } else {
        for &(a, b) in truth.edges() {
            let (a, b) = (a as usize, b as usize);
            let v = if is_negative_edge(config, a, b) {
                -log_normal(rng, config.theta2(), config.kappa2_sq())
            } else {
                log_normal(rng, config.theta1, config.kappa1_sq)
            };
            set(&mut w, a, b, v);
        }
    }
    if config.null_sd > 0.0 {
        for a in 0..n {
            for b in a + 1..n {
                if !truth.has_edge(a, b) {
                    let z: f64 = StandardNormal.sample(rng);
                    set(&mut w, a, b, config.null_sd * z);
                }
            }
        }
    }
    Ok(w)
}

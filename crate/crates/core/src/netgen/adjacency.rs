use rand::Rng;

use super::config::{Family, NetworkConfig};
use crate::error::Result;
use crate::graph::SparseGraph;

fn clique(nodes: std::ops::Range<usize>, out: &mut Vec<(u32, u32)>) {
    for a in nodes.clone() {
        for b in a + 1..nodes.end {
            out.push((a as u32, b as u32));
        }
    }
}

/// Group sizes for `g` near-equal groups covering `n` nodes: the first groups take
/// the smaller size.
pub fn group_sizes(n: usize, g: usize) -> Vec<usize> {
    let small = n / g;
    let n_large = n % g;
    (0..g).map(|k| if k < g - n_large { small } else { small + 1 }).collect()
}

/// Node ranges of the overlapped-cluster groups: `g` windows of `G/g` nodes, each
/// sharing `floor(0.2 G/g)` nodes with its neighbor. Nodes past the last window are
/// isolated.
pub fn overlapped_groups(n: usize, g: usize) -> Vec<std::ops::Range<usize>> {
    let size = n / g;
    let overlap = size / 5;
    let stride = size - overlap;
    (0..g).map(|k| k * stride..k * stride + size).collect()
}

fn barabasi_albert<R: Rng + ?Sized>(n: usize, m: usize, seed_nodes: usize, rng: &mut R) -> Vec<(u32, u32)> {
    let mut edges = Vec::new();
    clique(0..seed_nodes, &mut edges);
    // every node appears once per incident edge, so a uniform pick is degree-weighted
    let mut ends: Vec<u32> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let mut targets: Vec<u32> = Vec::with_capacity(m);
    for t in seed_nodes..n {
        targets.clear();
        while targets.len() < m {
            let v = ends[rng.random_range(0..ends.len())];
            if !targets.contains(&v) {
                targets.push(v);
            }
        }
        for &v in &targets {
            edges.push((v, t as u32));
            ends.push(v);
            ends.push(t as u32);
        }
    }
    edges
}

/// Draws the true edge set. Deterministic families ignore `rng`.
pub fn gen_adjacency<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<SparseGraph> {
    config.validate()?;
    let n = config.n_genes;
    let mut edges = Vec::new();
    match config.family {
        Family::Complete | Family::Ar => clique(0..config.s(), &mut edges),
        Family::TwoBlocks => {
            let s = config.s();
            clique(0..s, &mut edges);
            clique(s..2 * s, &mut edges);
        }
        Family::TwoNegBlocks => clique(0..2 * config.s(), &mut edges),
        Family::Random => {
            let p = config.need_p()?;
            for a in 0..n {
                for b in a + 1..n {
                    if rng.random::<f64>() < p {
                        edges.push((a as u32, b as u32));
                    }
                }
            }
        }
        Family::Hub => {
            let mut start = 0;
            for size in group_sizes(n, config.need_g()?) {
                for spoke in start + 1..start + size {
                    edges.push((start as u32, spoke as u32));
                }
                start += size;
            }
        }
        Family::Band => {
            let g = config.need_g()?;
            for a in 0..n {
                for b in a + 1..(a + g + 1).min(n) {
                    edges.push((a as u32, b as u32));
                }
            }
        }
        Family::ScaleFree => edges = barabasi_albert(n, config.m, config.seed_nodes, rng),
        Family::OverlappedCluster => {
            let p = config.need_p()?;
            for group in overlapped_groups(n, config.need_g()?) {
                for a in group.clone() {
                    for b in a + 1..group.end {
                        if rng.random::<f64>() < p {
                            edges.push((a as u32, b as u32));
                        }
                    }
                }
            }
        }
    }
    SparseGraph::from_edges(n, edges)
}

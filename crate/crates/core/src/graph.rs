//! Undirected graphs over gene indices and the per-node statistics computed on them.

use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable undirected simple graph with sorted neighbor lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseGraph {
    n_nodes: usize,
    edges: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl SparseGraph {
    pub fn empty(n_nodes: usize) -> Self {
        SparseGraph { n_nodes, edges: Vec::new(), offsets: vec![0; n_nodes + 1], neighbors: Vec::new() }
    }

    /// Builds a graph from unordered pairs. Pairs are normalized to `(min, max)` and
    /// duplicates merged; self-loops and out-of-range endpoints are rejected.
    pub fn from_edges<I>(n_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut list: Vec<(u32, u32)> = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop at node {a}")));
            }
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            if b as usize >= n_nodes {
                return Err(Error::invalid(format!("edge ({a}, {b}) outside {n_nodes} nodes")));
            }
            list.push((a, b));
        }
        list.sort_unstable();
        list.dedup();

        let mut degree = vec![0usize; n_nodes];
        for &(a, b) in &list {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n_nodes].to_vec();
        let mut neighbors = vec![0u32; 2 * list.len()];
        for &(a, b) in &list {
            neighbors[fill[a as usize]] = b;
            fill[a as usize] += 1;
            neighbors[fill[b as usize]] = a;
            fill[b as usize] += 1;
        }
        for m in 0..n_nodes {
            neighbors[offsets[m]..offsets[m + 1]].sort_unstable();
        }
        Ok(SparseGraph { n_nodes, edges: list, offsets, neighbors })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(m, n)` with `m < n`, sorted.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn neighbors(&self, m: usize) -> &[u32] {
        &self.neighbors[self.offsets[m]..self.offsets[m + 1]]
    }

    pub fn degree(&self, m: usize) -> usize {
        self.offsets[m + 1] - self.offsets[m]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n_nodes && b < self.n_nodes && self.neighbors(a).binary_search(&(b as u32)).is_ok()
    }

    /// Edge count over the number of node pairs.
    pub fn sparsity(&self) -> f64 {
        let k = self.n_nodes * self.n_nodes.saturating_sub(1) / 2;
        if k == 0 {
            0.0
        } else {
            self.edges.len() as f64 / k as f64
        }
    }

    /// Fraction of neighbor pairs of `m` that are themselves adjacent; 0 when the
    /// degree is at most 1.
    pub fn clustering_coeff(&self, m: usize) -> f64 {
        let nb = self.neighbors(m);
        let d = nb.len();
        if d <= 1 {
            return 0.0;
        }
        let mut links = 0usize;
        for (i, &v) in nb.iter().enumerate() {
            links += count_common_above(self.neighbors(v as usize), &nb[i + 1..]);
        }
        links as f64 / (d * (d - 1) / 2) as f64
    }

    pub fn stats_table(&self) -> Vec<NodeStats> {
        (0..self.n_nodes)
            .into_par_iter()
            .map(|m| {
                let degree = self.degree(m);
                let clustering = self.clustering_coeff(m);
                NodeStats { node: m, degree, clustering, gamma_d: clustering * degree as f64 }
            })
            .collect()
    }
}

/// Size of the intersection of two sorted lists.
fn count_common_above(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub node: usize,
    pub degree: usize,
    pub clustering: f64,
    pub gamma_d: f64,
}

pub const NODE_STATS_HEADER: &str = "node\tgene_id\tdegree\tclustering\tgamma_d";

pub fn write_node_stats<W: Write>(mut out: W, stats: &[NodeStats], gene_ids: &[String]) -> io::Result<()> {
    writeln!(out, "{NODE_STATS_HEADER}")?;
    for s in stats {
        let id = gene_ids.get(s.node).map(String::as_str).unwrap_or("");
        writeln!(out, "{}\t{}\t{}\t{}\t{}", s.node, id, s.degree, s.clustering, s.gamma_d)?;
    }
    out.flush()
}

/// Nodes whose neighbor sets differ between two graphs on the same node set.
pub fn symmetric_difference_nodes(g1: &SparseGraph, g2: &SparseGraph) -> Result<Vec<usize>> {
    if g1.n_nodes != g2.n_nodes {
        return Err(Error::NodeSetMismatch(g1.n_nodes, g2.n_nodes));
    }
    Ok((0..g1.n_nodes).filter(|&m| g1.neighbors(m) != g2.neighbors(m)).collect())
}

/// Node order that keeps densely connected groups contiguous.
///
/// One in-place sweep of label propagation in index order (each node adopts the most
/// common label among its neighbors, smallest label on ties), then a sort by
/// `(label, degree descending, index)`.
pub fn bitmap_order(graph: &SparseGraph) -> Vec<usize> {
    let n = graph.n_nodes;
    let mut label: Vec<u32> = (0..n as u32).collect();
    let mut counts: Vec<(u32, usize)> = Vec::new();
    for m in 0..n {
        let nb = graph.neighbors(m);
        if nb.is_empty() {
            continue;
        }
        counts.clear();
        counts.extend(nb.iter().map(|&v| (label[v as usize], 1)));
        counts.sort_unstable_by_key(|c| c.0);
        let mut best = (u32::MAX, 0usize);
        let mut i = 0;
        while i < counts.len() {
            let l = counts[i].0;
            let mut j = i;
            while j < counts.len() && counts[j].0 == l {
                j += 1;
            }
            if j - i > best.1 {
                best = (l, j - i);
            }
            i = j;
        }
        label[m] = best.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&m| (label[m], std::cmp::Reverse(graph.degree(m)), m));
    order
}

/// Writes a binary PBM (P4) adjacency bitmap in the given node order. Set bits are
/// edges. With `lower` given, the part below the diagonal shows that graph instead,
/// so two graphs can be compared in one picture.
pub fn write_pbm<W: Write>(
    mut out: W,
    upper: &SparseGraph,
    lower: Option<&SparseGraph>,
    order: &[usize],
) -> Result<()> {
    let n = upper.n_nodes;
    if let Some(l) = lower {
        if l.n_nodes != n {
            return Err(Error::NodeSetMismatch(n, l.n_nodes));
        }
    }
    if order.len() != n {
        return Err(Error::invalid(format!("order has {} entries for {n} nodes", order.len())));
    }
    let mut position = vec![usize::MAX; n];
    for (i, &m) in order.iter().enumerate() {
        if m >= n || position[m] != usize::MAX {
            return Err(Error::invalid("node order is not a permutation"));
        }
        position[m] = i;
    }
    write!(out, "P4\n{n} {n}\n")?;
    let row_bytes = n.div_ceil(8);
    let mut row = vec![0u8; row_bytes];
    for (i, &m) in order.iter().enumerate() {
        row.iter_mut().for_each(|b| *b = 0);
        let mut set = |v: u32| {
            let j = position[v as usize];
            row[j / 8] |= 0x80 >> (j % 8);
        };
        for &v in upper.neighbors(m) {
            if lower.is_none() || position[v as usize] > i {
                set(v);
            }
        }
        if let Some(l) = lower {
            for &v in l.neighbors(m) {
                if position[v as usize] < i {
                    set(v);
                }
            }
        }
        out.write_all(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_pbm_file(path: &Path, upper: &SparseGraph, lower: Option<&SparseGraph>, order: &[usize]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pbm(f, upper, lower, order)
}

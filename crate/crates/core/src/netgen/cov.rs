use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::expr_io::ExpressionMatrix;
use crate::graph::SparseGraph;

/// Eigenvalue floor used when repairing an indefinite correlation matrix.
pub const REPAIR_EPS: f64 = 1e-6;
/// Smallest eigenvalue accepted as positive definite after repair.
pub const REPAIR_ACCEPT: f64 = 1e-7;
pub const REPAIR_MAX_PASSES: usize = 100;

/// One diagonal block and the nodes it covers, in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub nodes: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

/// Symmetric block-diagonal matrix over `0..n`, up to a node permutation. Entries
/// between different blocks are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    n: usize,
    blocks: Vec<Block>,
    location: Vec<(u32, u32)>,
}

impl BlockMatrix {
    pub fn new(n: usize, blocks: Vec<Block>) -> Result<Self> {
        let mut location = vec![(u32::MAX, 0); n];
        for (bi, b) in blocks.iter().enumerate() {
            if b.matrix.nrows() != b.nodes.len() || b.matrix.ncols() != b.nodes.len() {
                return Err(Error::invalid("block matrix shape does not match its node list"));
            }
            for (pos, &m) in b.nodes.iter().enumerate() {
                if m >= n || location[m].0 != u32::MAX {
                    return Err(Error::invalid("blocks must partition the node set"));
                }
                location[m] = (bi as u32, pos as u32);
            }
        }
        if location.iter().any(|l| l.0 == u32::MAX) {
            return Err(Error::invalid("blocks must partition the node set"));
        }
        Ok(BlockMatrix { n, blocks, location })
    }

    pub fn identity(n: usize) -> Self {
        let blocks = (0..n).map(|m| Block { nodes: vec![m], matrix: DMatrix::identity(1, 1) }).collect();
        BlockMatrix::new(n, blocks).expect("singletons partition the nodes")
    }

    /// Wraps a dense symmetric matrix, splitting it into the connected components of
    /// its off-diagonal nonzero pattern.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::invalid("matrix must be square"));
        }
        let mut pattern = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if m[(a, b)] != 0.0 || m[(b, a)] != 0.0 {
                    pattern.push((a as u32, b as u32));
                }
            }
        }
        let blocks = components(n, &pattern)
            .into_iter()
            .map(|nodes| {
                let matrix = DMatrix::from_fn(nodes.len(), nodes.len(), |i, j| m[(nodes[i], nodes[j])]);
                Block { nodes, matrix }
            })
            .collect();
        BlockMatrix::new(n, blocks)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (bi, pi) = self.location[i];
        let (bj, pj) = self.location[j];
        if bi != bj {
            return 0.0;
        }
        self.blocks[bi as usize].matrix[(pi as usize, pj as usize)]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for b in &self.blocks {
            for (i, &a) in b.nodes.iter().enumerate() {
                for (j, &c) in b.nodes.iter().enumerate() {
                    d[(a, c)] = b.matrix[(i, j)];
                }
            }
        }
        d
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| SymmetricEigen::new(b.matrix.clone()).eigenvalues.min())
            .fold(f64::INFINITY, f64::min)
    }

    /// Inverse of a positive definite block matrix.
    pub fn inverse(&self) -> Result<Self> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let chol = b.matrix.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
                Ok(Block { nodes: b.nodes.clone(), matrix: chol.inverse() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockMatrix { n: self.n, blocks, location: self.location.clone() })
    }

    /// Rescales to unit diagonal.
    pub fn to_correlation(&mut self) {
        for b in &mut self.blocks {
            rescale_unit_diagonal(&mut b.matrix);
        }
    }
}

/// Connected components of a graph given as an edge list; each component's nodes are
/// ascending and components are ordered by their smallest node.
pub fn components(n: usize, edges: &[(u32, u32)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a as usize), find(&mut parent, b as usize));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut index = vec![usize::MAX; n];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for m in 0..n {
        let r = find(&mut parent, m);
        if index[r] == usize::MAX {
            index[r] = out.len();
            out.push(Vec::new());
        }
        out[index[r]].push(m);
    }
    out
}

fn rescale_unit_diagonal(m: &mut DMatrix<f64>) {
    let d: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)].sqrt()).collect();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] /= d[i] * d[j];
        }
        m[(i, i)] = 1.0;
    }
}

/// Outcome of positive-definite repair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RepairReport {
    /// Clipping passes applied; 0 when the input was already positive definite.
    pub passes: usize,
    pub max_abs_change: f64,
    pub min_eigenvalue: f64,
}

/// Makes a unit-diagonal symmetric matrix positive definite by clipping eigenvalues
/// at [`REPAIR_EPS`] and rescaling to unit diagonal, repeated until the smallest
/// eigenvalue reaches [`REPAIR_ACCEPT`].
pub fn repair_correlation(r: &mut DMatrix<f64>) -> Result<RepairReport> {
    let original = r.clone();
    for pass in 0..=REPAIR_MAX_PASSES {
        let eig = SymmetricEigen::new(r.clone());
        let min = eig.eigenvalues.min();
        if min >= REPAIR_ACCEPT {
            let max_abs_change = (&*r - &original).amax();
            return Ok(RepairReport { passes: pass, max_abs_change, min_eigenvalue: min });
        }
        if pass == REPAIR_MAX_PASSES {
            break;
        }
        let clipped = eig.eigenvalues.map(|l| l.max(REPAIR_EPS));
        let v = &eig.eigenvectors;
        let mut rebuilt = v * DMatrix::from_diagonal(&clipped) * v.transpose();
        rebuilt = 0.5 * (&rebuilt + rebuilt.transpose());
        rescale_unit_diagonal(&mut rebuilt);
        *r = rebuilt;
    }
    Err(Error::RepairFailed)
}

/// Correlation matrix `tanh(W)` (unit diagonal), repaired to positive definite when
/// needed. Blocks follow the nonzero pattern of `W`.
pub fn weights_to_cov(w: &DMatrix<f64>) -> Result<(BlockMatrix, RepairReport)> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::invalid("weight matrix must be square"));
    }
    let mut total = RepairReport { min_eigenvalue: f64::INFINITY, ..Default::default() };
    let mut blocks = Vec::new();
    for b in BlockMatrix::from_dense(w)?.blocks {
        let mut r = b.matrix.map(f64::tanh);
        r.fill_diagonal(1.0);
        let rep = if r.nrows() == 1 {
            RepairReport { passes: 0, max_abs_change: 0.0, min_eigenvalue: 1.0 }
        } else {
            repair_correlation(&mut r)?
        };
        total.passes = total.passes.max(rep.passes);
        total.max_abs_change = total.max_abs_change.max(rep.max_abs_change);
        total.min_eigenvalue = total.min_eigenvalue.min(rep.min_eigenvalue);
        blocks.push(Block { nodes: b.nodes, matrix: r });
    }
    Ok((BlockMatrix::new(n, blocks)?, total))
}

/// Sparse precision matrix: `v * A` off the diagonal and `|lambda_min(v A)| + 0.1 + u`
/// on it.
pub fn precision_matrix(adjacency: &SparseGraph, v: f64, u: f64) -> Result<BlockMatrix> {
    if !(v > 0.0 && u > 0.0) {
        return Err(Error::invalid(format!("v = {v} and u = {u} must be positive")));
    }
    let n = adjacency.n_nodes();
    let mut blocks: Vec<Block> = components(n, adjacency.edges())
        .into_iter()
        .map(|nodes| {
            let k = nodes.len();
            let matrix = DMatrix::from_fn(k, k, |i, j| if adjacency.has_edge(nodes[i], nodes[j]) { v } else { 0.0 });
            Block { nodes, matrix }
        })
        .collect();
    let lambda_min = blocks
        .iter()
        .filter(|b| b.nodes.len() > 1)
        .map(|b| SymmetricEigen::new(b.matrix.clone()).eigenvalues.min())
        .fold(0.0f64, f64::min);
    let diag = lambda_min.abs() + 0.1 + u;
    for b in &mut blocks {
        b.matrix.fill_diagonal(diag);
    }
    BlockMatrix::new(n, blocks)
}

/// Correlation form of the inverse of [`precision_matrix`].
pub fn adjacency_to_cov(adjacency: &SparseGraph, v: f64, u: f64) -> Result<BlockMatrix> {
    let mut sigma = precision_matrix(adjacency, v, u)?.inverse()?;
    sigma.to_correlation();
    Ok(sigma)
}

/// `n_samples` independent draws from `N(0, cov)`, genes as rows. Standard normals are
/// drawn gene by gene, sample by sample, from one seeded stream.
pub fn sample_mvn(cov: &BlockMatrix, n_samples: usize, seed: u64) -> Result<ExpressionMatrix> {
    if n_samples < 4 {
        return Err(Error::TooFewSamples(n_samples));
    }
    let n = cov.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n * n_samples).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut values = vec![0.0; n * n_samples];
    for b in cov.blocks() {
        let l = b.matrix.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
        for (i, &gi) in b.nodes.iter().enumerate() {
            let row = &mut values[gi * n_samples..(gi + 1) * n_samples];
            for (j, &gj) in b.nodes.iter().enumerate().take(i + 1) {
                let c = l[(i, j)];
                if c == 0.0 {
                    continue;
                }
                let zr = &z[gj * n_samples..(gj + 1) * n_samples];
                for (x, &zz) in row.iter_mut().zip(zr) {
                    *x += c * zz;
                }
            }
        }
    }
    let gene_ids = (0..n).map(|g| format!("g{g:05}")).collect();
    let sample_ids = (0..n_samples).map(|s| format!("s{s:03}")).collect();
    ExpressionMatrix::new(gene_ids, sample_ids, values)
}

/// The `round(target_sparsity * K)` pairs with the largest `|cov|`, ties broken by
/// pair order.
pub fn truth_by_cov_threshold(cov: &BlockMatrix, target_sparsity: f64) -> Result<SparseGraph> {
    if !(target_sparsity > 0.0 && target_sparsity <= 1.0) {
        return Err(Error::invalid(format!("target sparsity {target_sparsity} must lie in (0,1]")));
    }
    let n = cov.dim();
    let k = n * (n - 1) / 2;
    let want = ((target_sparsity * k as f64).round() as usize).min(k);
    let mut nonzero: Vec<(f64, u32, u32)> = Vec::new();
    for b in cov.blocks() {
        for i in 0..b.nodes.len() {
            for j in i + 1..b.nodes.len() {
                let v = b.matrix[(i, j)].abs();
                if v > 0.0 {
                    nonzero.push((v, b.nodes[i] as u32, b.nodes[j] as u32));
                }
            }
        }
    }
    nonzero.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut edges: Vec<(u32, u32)> = nonzero.iter().take(want).map(|e| (e.1, e.2)).collect();
    if edges.len() < want {
        let mut taken = edges.clone();
        taken.sort_unstable();
        'fill: for a in 0..n as u32 {
            for b in a + 1..n as u32 {
                if edges.len() == want {
                    break 'fill;
                }
                if taken.binary_search(&(a, b)).is_err() {
                    edges.push((a, b));
                }
            }
        }
    }
    SparseGraph::from_edges(n, edges)
}

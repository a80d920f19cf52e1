//! Pairwise Pearson correlations and Fisher-z edge weights.
//!
//! The full set of `K = G(G-1)/2` weights is produced as a stream of fixed-size
//! batches walking the upper triangle row by row, so nothing of size `K` has to be
//! held at once. Each weight is computed the same way regardless of batch size or
//! thread count, so the stream is bit-reproducible.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr_io::ExpressionMatrix;

/// Correlations are clamped to `±(1 - 1e-8)` before the Fisher transform.
pub const DEFAULT_CLAMP: f64 = 1.0 - 1e-8;

/// Default number of pairs per batch.
pub const DEFAULT_BLOCK_SIZE: usize = 1_000_000;

/// Sample Pearson correlation, computed in two passes (means first, then centered
/// moments).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    if x.len() < 4 {
        return Err(Error::TooFewSamples(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance(0));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance(1));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fisher z-transform with clamping: `atanh(r')`, `r' = sign(r) * clamp` once
/// `|r| >= clamp`.
pub fn fisher_z(r: f64, clamp: f64) -> f64 {
    r.abs().min(clamp).atanh().copysign(r)
}

/// A block of weights and the gene pairs they belong to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightBatch {
    pub pairs: Vec<(u32, u32)>,
    pub weights: Vec<f64>,
}

impl WeightBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        self.pairs.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Each gene centered and scaled to unit norm, so a correlation is one dot product.
struct Standardized {
    rows: Vec<f64>,
    n: usize,
}

impl Standardized {
    fn new(expr: &ExpressionMatrix) -> Result<Self> {
        let n = expr.n_samples();
        let mut rows = Vec::with_capacity(expr.values().len());
        for g in 0..expr.n_genes() {
            let row = expr.row(g);
            let mean = row.iter().sum::<f64>() / n as f64;
            let ss: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum();
            if ss == 0.0 {
                return Err(Error::ZeroVariance(g));
            }
            let scale = ss.sqrt().recip();
            rows.extend(row.iter().map(|v| (v - mean) * scale));
        }
        Ok(Standardized { rows, n })
    }

    fn weight(&self, m: u32, k: u32, clamp: f64) -> f64 {
        let a = &self.rows[m as usize * self.n..(m as usize + 1) * self.n];
        let b = &self.rows[k as usize * self.n..(k as usize + 1) * self.n];
        let r: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        fisher_z(r.clamp(-1.0, 1.0), clamp)
    }
}

/// Iterator over all gene pairs in row-major upper-triangle order.
pub struct WeightStream {
    z: Standardized,
    n_genes: u32,
    block_size: usize,
    clamp: f64,
    cursor: (u32, u32),
}

impl WeightStream {
    /// Validates every gene (a constant gene is reported before any pair is formed).
    pub fn new(expr: &ExpressionMatrix, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::invalid("block size must be positive"));
        }
        Ok(WeightStream {
            z: Standardized::new(expr)?,
            n_genes: expr.n_genes() as u32,
            block_size,
            clamp: DEFAULT_CLAMP,
            cursor: (0, 1),
        })
    }

    pub fn with_clamp(mut self, clamp: f64) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes as usize
    }
}

impl Iterator for WeightStream {
    type Item = WeightBatch;

    fn next(&mut self) -> Option<WeightBatch> {
        let g = self.n_genes;
        let (mut m, mut k) = self.cursor;
        if m + 1 >= g {
            return None;
        }
        let mut pairs = Vec::with_capacity(self.block_size.min(1 << 20));
        while pairs.len() < self.block_size && m + 1 < g {
            pairs.push((m, k));
            k += 1;
            if k == g {
                m += 1;
                k = m + 1;
            }
        }
        self.cursor = (m, k);
        let z = &self.z;
        let clamp = self.clamp;
        let weights = pairs.par_iter().map(|&(a, b)| z.weight(a, b, clamp)).collect();
        Some(WeightBatch { pairs, weights })
    }
}

/// All `K` weights in stream order.
pub fn all_weights(expr: &ExpressionMatrix) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(expr.n_pairs());
    for batch in WeightStream::new(expr, DEFAULT_BLOCK_SIZE)? {
        out.extend(batch.weights);
    }
    Ok(out)
}

/// Index of pair `(m, k)`, `m < k`, in stream order over `g` genes.
pub fn pair_index(m: usize, k: usize, g: usize) -> usize {
    debug_assert!(m < k && k < g);
    m * (2 * g - m - 1) / 2 + (k - m - 1)
}

/// Writes weights as flat little-endian records `(u32 m, u32 n, f64 w)`.
pub fn write_weight_cache<I>(path: impl AsRef<Path>, batches: I) -> Result<usize>
where
    I: IntoIterator<Item = WeightBatch>,
{
    let mut out = BufWriter::new(File::create(path)?);
    let mut count = 0;
    for batch in batches {
        for ((m, k), w) in batch.iter() {
            out.write_all(&m.to_le_bytes())?;
            out.write_all(&k.to_le_bytes())?;
            out.write_all(&w.to_le_bytes())?;
            count += 1;
        }
    }
    out.flush()?;
    Ok(count)
}

/// Reads a weight cache back as batches of at most `block_size` records.
pub fn read_weight_cache(path: impl AsRef<Path>, block_size: usize) -> Result<Vec<WeightBatch>> {
    let mut input = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Parse { line: 0, msg: "weight cache length is not a multiple of 16".into() });
    }
    let mut out = Vec::new();
    let mut batch = WeightBatch::default();
    for rec in bytes.chunks_exact(16) {
        let m = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        let k = u32::from_le_bytes(rec[4..8].try_into().unwrap());
        let w = f64::from_le_bytes(rec[8..16].try_into().unwrap());
        batch.pairs.push((m, k));
        batch.weights.push(w);
        if batch.len() == block_size.max(1) {
            out.push(std::mem::take(&mut batch));
        }
    }
    if !batch.is_empty() {
        out.push(batch);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: &[&[f64]]) -> ExpressionMatrix {
        let ids = (0..rows.len()).map(|i| format!("g{i}")).collect();
        let samples = (0..rows[0].len()).map(|j| format!("s{j}")).collect();
        ExpressionMatrix::new(ids, samples, rows.concat()).unwrap()
    }

    #[test]
    fn identical_vectors_correlate_perfectly() {
        let x = [0.3, -1.0, 2.5, 4.0, 0.0];
        assert_eq!(pearson(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn reversed_vectors_anticorrelate() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!((r + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_vector_is_zero_variance() {
        assert!(matches!(pearson(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(Error::ZeroVariance(0))));
        let m = matrix(&[&[1.0, 2.0, 3.0, 4.0], &[2.0; 4], &[1.0, 0.0, 1.0, 0.0]]);
        assert!(matches!(WeightStream::new(&m, 10), Err(Error::ZeroVariance(1))));
    }

    #[test]
    fn fisher_z_reference_values() {
        assert_eq!(fisher_z(0.0, DEFAULT_CLAMP), 0.0);
        let half = 0.5 * (1.5f64 / 0.5).ln();
        assert!((fisher_z(0.5, DEFAULT_CLAMP) - half).abs() < 1e-15);
        assert!((fisher_z(0.5, DEFAULT_CLAMP) - 0.549_306_144_334_054_8).abs() < 1e-15);
        let top = fisher_z(1.0, DEFAULT_CLAMP);
        assert!(top.is_finite());
        assert_eq!(top, DEFAULT_CLAMP.atanh());
        assert_eq!(fisher_z(-1.0, DEFAULT_CLAMP), -top);
    }

    #[test]
    fn three_genes_give_three_pairs() {
        let m = matrix(&[&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0], &[0.0, 1.0, 0.0, 2.0]]);
        let batches: Vec<_> = WeightStream::new(&m, 2).unwrap().collect();
        let pairs: Vec<_> = batches.iter().flat_map(|b| b.pairs.clone()).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(batches.len(), 2);
    }

    #[test]
    fn pair_index_matches_stream_order() {
        let g = 7;
        let mut i = 0;
        for m in 0..g {
            for k in m + 1..g {
                assert_eq!(pair_index(m, k, g), i);
                i += 1;
            }
        }
    }

    #[test]
    fn cache_round_trips() {
        let m = matrix(&[
            &[1.0, 2.0, 3.0, 4.0, 2.0],
            &[2.0, 1.0, 4.0, 3.0, 0.0],
            &[0.0, 1.0, 0.0, 2.0, 5.0],
            &[1.0, 1.0, 0.5, 2.0, -5.0],
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let n = write_weight_cache(&path, WeightStream::new(&m, 4).unwrap()).unwrap();
        assert_eq!(n, 6);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 96);
        let back: Vec<_> = read_weight_cache(&path, 4).unwrap();
        let direct: Vec<_> = WeightStream::new(&m, 4).unwrap().collect();
        assert_eq!(back, direct);
    }

    proptest! {
        #[test]
        fn pearson_is_symmetric(v in prop::collection::vec(-10.0f64..10.0, 8..40)) {
            let (x, y) = v.split_at(v.len() / 2);
            let n = x.len().min(y.len());
            if let (Ok(a), Ok(b)) = (pearson(&x[..n], &y[..n]), pearson(&y[..n], &x[..n])) {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn pearson_is_affine_invariant(
            v in prop::collection::vec(-10.0f64..10.0, 8..40),
            slope in 0.01f64..100.0,
            shift in -50.0f64..50.0,
        ) {
            let (x, y) = v.split_at(v.len() / 2);
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            if let Ok(r) = pearson(x, y) {
                let x2: Vec<f64> = x.iter().map(|a| slope * a + shift).collect();
                let r2 = pearson(&x2, y).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
            }
        }

        #[test]
        fn fisher_z_is_odd(r in -1.0f64..=1.0) {
            prop_assert_eq!(fisher_z(-r, DEFAULT_CLAMP), -fisher_z(r, DEFAULT_CLAMP));
        }
    }
}

//! Replicated experiments: scoring recovered graphs against a known truth, sweeping
//! thresholds into true-positive curves, and averaging over replicates.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr::{WeightBatch, WeightStream, DEFAULT_BLOCK_SIZE};
use crate::decision::{decide_edges, thresholds_by_fdr, HalfLineOdds};
use crate::error::{Error, Result};
use crate::expr_io::{gene_index, ExpressionMatrix};
use crate::graph::SparseGraph;
use crate::mixture::{em_fit, EmOptions, L2NParams};
use crate::netgen::{replicate_seed, simulate, truth_by_cov_threshold, NetworkConfig};

/// Confusion counts of a recovered edge set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `fp / max(1, tp + fp)`.
    pub observed_fdr: f64,
    /// `tp / n_true`; 0 when the truth has no edges.
    pub power: f64,
}

pub fn score(recovered: &SparseGraph, truth: &SparseGraph) -> Result<Score> {
    if recovered.n_nodes() != truth.n_nodes() {
        return Err(Error::NodeSetMismatch(recovered.n_nodes(), truth.n_nodes()));
    }
    let tp = recovered.edges().iter().filter(|&&(a, b)| truth.has_edge(a as usize, b as usize)).count();
    let fp = recovered.n_edges() - tp;
    let n_true = truth.n_edges();
    Ok(Score {
        tp,
        fp,
        fn_: n_true - tp,
        observed_fdr: fp as f64 / (tp + fp).max(1) as f64,
        power: if n_true == 0 { 0.0 } else { tp as f64 / n_true as f64 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    Adjacency,
    CovThreshold,
}

impl TruthKind {
    pub fn name(self) -> &'static str {
        match self {
            TruthKind::Adjacency => "adjacency",
            TruthKind::CovThreshold => "cov_threshold",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub total_detected: usize,
    pub true_positives: usize,
}

/// True positives as a function of the number of edges a method reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurve {
    pub method: String,
    pub truth_kind: TruthKind,
    pub n_true_edges: usize,
    pub points: Vec<CurvePoint>,
}

impl ScoreCurve {
    /// True positives at `total` detected edges, interpolated linearly between the
    /// neighboring sweep points. `None` outside the swept range.
    pub fn tp_at(&self, total: f64) -> Option<f64> {
        let pts = &self.points;
        let first = pts.first()?;
        if total < first.total_detected as f64 {
            return None;
        }
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if total <= b.total_detected as f64 {
                if b.total_detected == a.total_detected {
                    return Some(b.true_positives as f64);
                }
                let f = (total - a.total_detected as f64) / (b.total_detected - a.total_detected) as f64;
                return Some(a.true_positives as f64 + f * (b.true_positives as f64 - a.true_positives as f64));
            }
        }
        let last = pts.last()?;
        (total == last.total_detected as f64).then_some(last.true_positives as f64)
    }

    /// Checks the curve invariants: both coordinates nondecreasing and no point with
    /// more true positives than detected edges or true edges.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if p.true_positives > p.total_detected.min(self.n_true_edges) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!(
                        "{} true positives exceed min({} detected, {} true edges)",
                        p.true_positives, p.total_detected, self.n_true_edges
                    ),
                });
            }
        }
        for w in self.points.windows(2) {
            if w[1].total_detected < w[0].total_detected || w[1].true_positives < w[0].true_positives {
                return Err(Error::invalid(format!("curve {} is not monotone", self.method)));
            }
        }
        Ok(())
    }
}

/// Expected true positives when `total` edges are picked uniformly at random.
pub fn chance_tp(total: f64, sparsity: f64) -> f64 {
    total * sparsity
}

/// Edge totals visited by a sweep: `levels` values from 0 to `3 * n_true`, capped at
/// the number of pairs.
pub fn sweep_totals(n_true: usize, n_pairs: usize, levels: usize) -> Vec<usize> {
    let top = (3 * n_true).min(n_pairs) as f64;
    (0..levels)
        .map(|i| (top * i as f64 / (levels - 1) as f64).round() as usize)
        .collect()
}

/// All pairs of an expression matrix in one batch.
pub fn all_pairs(expr: &ExpressionMatrix) -> Result<WeightBatch> {
    let mut out = WeightBatch::default();
    for b in WeightStream::new(expr, DEFAULT_BLOCK_SIZE)? {
        out.pairs.extend(b.pairs);
        out.weights.extend(b.weights);
    }
    Ok(out)
}

/// Edge sets of the correlation-thresholding baseline: the pairs with the largest
/// `|r|` (ties by pair order), one set per sweep total.
pub fn baseline_edge_sets(weights: &WeightBatch, totals: &[usize]) -> Vec<Vec<(u32, u32)>> {
    let order = abs_order(weights);
    totals.iter().map(|&t| order[..t.min(order.len())].iter().map(|&i| weights.pairs[i]).collect()).collect()
}

fn abs_order(weights: &WeightBatch) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.par_sort_by(|&i, &j| weights.weights[j].abs().total_cmp(&weights.weights[i].abs()).then(i.cmp(&j)));
    order
}

/// Score curve of thresholding `|r|` (equivalently `|w|`), with totals evenly spaced
/// from 0 to three times the true edge count.
pub fn baseline_threshold_sweep(
    weights: &WeightBatch,
    truth: &SparseGraph,
    truth_kind: TruthKind,
    levels: usize,
) -> Result<ScoreCurve> {
    if levels < 2 {
        return Err(Error::invalid("a sweep needs at least 2 levels"));
    }
    let order = abs_order(weights);
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0usize);
    for &i in &order {
        let (a, b) = weights.pairs[i];
        prefix.push(prefix.last().unwrap() + truth.has_edge(a as usize, b as usize) as usize);
    }
    let points = sweep_totals(truth.n_edges(), weights.len(), levels)
        .into_iter()
        .map(|t| CurvePoint { total_detected: t, true_positives: prefix[t] })
        .collect();
    Ok(ScoreCurve { method: "threshold".into(), truth_kind, n_true_edges: truth.n_edges(), points })
}

/// One sign of the weights, sorted by magnitude, with running true-positive counts
/// from the largest magnitude down.
struct SortedSide {
    abs: Vec<f64>,
    tp_from_top: Vec<usize>,
}

impl SortedSide {
    fn new(mut items: Vec<(f64, bool)>) -> Self {
        items.sort_by(|x, y| x.0.total_cmp(&y.0));
        let abs: Vec<f64> = items.iter().map(|x| x.0).collect();
        let mut tp_from_top = vec![0usize; items.len() + 1];
        for i in (0..items.len()).rev() {
            tp_from_top[i] = tp_from_top[i + 1] + items[i].1 as usize;
        }
        SortedSide { abs, tp_from_top }
    }

    /// (count, tp) of magnitudes strictly above `cut`.
    fn above(&self, cut: f64) -> (usize, usize) {
        let start = self.abs.partition_point(|&x| x <= cut);
        (self.abs.len() - start, self.tp_from_top[start])
    }
}

/// Score curve of the mixture decision rule as the posterior-odds level moves.
///
/// For each sweep total the odds level is bisected to the largest rejection region
/// holding at most that many edges, so the sets are nested and the recorded totals
/// sit at or just below the targets.
pub fn l2n_sweep(
    weights: &WeightBatch,
    params: &L2NParams,
    truth: &SparseGraph,
    truth_kind: TruthKind,
    levels: usize,
) -> Result<ScoreCurve> {
    if levels < 2 {
        return Err(Error::invalid("a sweep needs at least 2 levels"));
    }
    params.validate()?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for ((a, b), w) in weights.iter() {
        let t = truth.has_edge(a as usize, b as usize);
        if w > 0.0 {
            pos.push((w, t));
        } else if w < 0.0 {
            neg.push((-w, t));
        }
    }
    let (pos, neg) = (SortedSide::new(pos), SortedSide::new(neg));
    let odds_pos = HalfLineOdds::new(params, true);
    let odds_neg = HalfLineOdds::new(params, false);
    let at_level = |level: f64| {
        let cut = |o: &Option<HalfLineOdds>| o.as_ref().and_then(|h| h.first_crossing(level)).unwrap_or(f64::INFINITY);
        let (n1, t1) = pos.above(cut(&odds_pos));
        let (n2, t2) = neg.above(cut(&odds_neg));
        (n1 + n2, t1 + t2)
    };

    let mut points = Vec::with_capacity(levels);
    for target in sweep_totals(truth.n_edges(), weights.len(), levels) {
        let fits = |level: f64| at_level(level).0 <= target;
        let mut hi = 1.0;
        while !fits(hi) && hi < 1e6 {
            hi = 2.0 * hi + 1.0;
        }
        let mut lo = -1.0;
        while fits(lo) && lo > -1e6 {
            lo = 2.0 * lo - 1.0;
        }
        let level = if fits(lo) { lo } else { crate::numeric::bisect_flip(lo, hi, fits) };
        let (n, t) = at_level(level);
        points.push(CurvePoint { total_detected: n, true_positives: t });
    }
    Ok(ScoreCurve { method: "l2n".into(), truth_kind, n_true_edges: truth.n_edges(), points })
}

/// Writes per-level edge sets as `level gene_a gene_b` rows.
pub fn write_level_edges<W: Write>(mut out: W, gene_ids: &[String], sets: &[Vec<(u32, u32)>]) -> Result<()> {
    writeln!(out, "level\tgene_a\tgene_b")?;
    for (level, set) in sets.iter().enumerate() {
        for &(a, b) in set {
            writeln!(out, "{level}\t{}\t{}", gene_ids[a as usize], gene_ids[b as usize])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a curve produced elsewhere and scores it like a native one.
///
/// Two layouts are accepted, told apart by the header:
/// `level gene_a gene_b` (one edge set per level, scored against `truth`), or
/// `total_detected true_positives` (already scored; checked for consistency).
pub fn import_external_edges(
    path: impl AsRef<Path>,
    method: &str,
    gene_ids: &[String],
    truth: &SparseGraph,
    truth_kind: TruthKind,
) -> Result<ScoreCurve> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let mut curve = ScoreCurve { method: method.to_string(), truth_kind, n_true_edges: truth.n_edges(), points: vec![] };
    let header = loop {
        match lines.next() {
            None => return Ok(curve),
            Some((_, l)) => {
                let l = l?;
                if !l.trim().is_empty() {
                    break l;
                }
            }
        }
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let bad = |line: usize, msg: String| Error::Parse { line, msg };

    if let (Some(ti), Some(pi)) =
        (cols.iter().position(|&c| c == "total_detected"), cols.iter().position(|&c| c == "true_positives" || c == "tp"))
    {
        for (i, l) in lines {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split('\t').collect();
            let get = |k: usize| -> Result<usize> {
                f.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| bad(i + 1, format!("expected an integer in column {}", k + 1)))
            };
            curve.points.push(CurvePoint { total_detected: get(ti)?, true_positives: get(pi)? });
        }
    } else if cols.len() >= 3 && cols[0] == "level" {
        let index = gene_index(gene_ids);
        let mut sets: BTreeMap<i64, Vec<(u32, u32)>> = BTreeMap::new();
        for (i, l) in lines {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split('\t').map(str::trim).collect();
            if f.len() < 3 {
                return Err(bad(i + 1, "expected level, gene_a, gene_b".into()));
            }
            let level: i64 = f[0].parse().map_err(|_| bad(i + 1, format!("bad level {:?}", f[0])))?;
            let id = |s: &str| index.get(s).copied().ok_or_else(|| bad(i + 1, format!("unknown gene {s:?}")));
            let (a, b) = (id(f[1])?, id(f[2])?);
            if a == b {
                return Err(bad(i + 1, "self-loop".into()));
            }
            sets.entry(level).or_default().push((a.min(b), a.max(b)));
        }
        for (_, set) in sets {
            let g = SparseGraph::from_edges(truth.n_nodes(), set)?;
            let s = score(&g, truth)?;
            curve.points.push(CurvePoint { total_detected: g.n_edges(), true_positives: s.tp });
        }
    } else {
        return Err(bad(1, "header must name level/gene_a/gene_b or total_detected/true_positives".into()));
    }
    curve.points.sort_by_key(|p| (p.total_detected, p.true_positives));
    curve.validate()?;
    Ok(curve)
}

/// Writes curves as plot-ready rows.
pub fn write_curves_tsv<W: Write>(mut out: W, curves: &[(usize, &ScoreCurve)]) -> Result<()> {
    writeln!(out, "replicate\ttotal_detected\ttp\tmethod\ttruth_kind")?;
    for (rep, c) in curves {
        for p in &c.points {
            writeln!(out, "{rep}\t{}\t{}\t{}\t{}", p.total_detected, p.true_positives, c.method, c.truth_kind.name())?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ExperimentOptions {
    pub replicates: usize,
    pub fdr_alpha: f64,
    /// Points per score curve; `None` skips the sweeps.
    pub sweep_levels: Option<usize>,
    /// Also score against the thresholded true covariance.
    pub cov_threshold_truth: bool,
    pub em: EmOptions,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            replicates: 20,
            fdr_alpha: 0.01,
            sweep_levels: Some(30),
            cov_threshold_truth: false,
            em: EmOptions::default(),
        }
    }
}

/// Everything measured on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub n_true_edges: usize,
    pub true_p1: f64,
    pub true_p2: f64,
    pub fit: L2NParams,
    pub n_iterations: usize,
    pub rmse: f64,
    #[serde(with = "crate::expr_io::serde_inf")]
    pub c1: f64,
    #[serde(with = "crate::expr_io::serde_inf")]
    pub c2: f64,
    pub est_fdr: f64,
    pub est_power: f64,
    pub edges: usize,
    pub score: Score,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curves: Vec<ScoreCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    /// 2.5% and 97.5% empirical quantiles over replicates.
    pub band: (f64, f64),
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Summary { mean, sd, band: (quantile(&s, 0.025), quantile(&s, 0.975)) })
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let (i, f) = (h.floor() as usize, h - h.floor());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: NetworkConfig,
    pub fdr_alpha: f64,
    pub replicates: Vec<ReplicateResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<ReplicateFailure>,
    pub power: Option<Summary>,
    pub observed_fdr: Option<Summary>,
    pub rmse: Option<Summary>,
    pub p1_hat: Option<Summary>,
}

impl ExperimentReport {
    /// Replicate-averaged true positives of `method` at `total` detected edges.
    pub fn mean_tp_at(&self, method: &str, truth_kind: TruthKind, total: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .replicates
            .iter()
            .filter_map(|r| {
                r.curves.iter().find(|c| c.method == method && c.truth_kind == truth_kind)?.tp_at(total)
            })
            .collect();
        (!vals.is_empty() && vals.len() == self.replicates.len()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Simulates, fits, decides and scores one replicate.
pub fn run_replicate(config: &NetworkConfig, opts: &ExperimentOptions, replicate: usize) -> Result<ReplicateResult> {
    let seed = replicate_seed(config.seed, replicate as u64);
    let cfg = config.clone().with_seed(seed);
    let sim = simulate(&cfg)?;
    let weights = all_pairs(&sim.expr)?;
    let fit = em_fit(&weights.weights, cfg.n_samples as u32, None, &opts.em)?;
    let thr = thresholds_by_fdr(&fit.params, opts.fdr_alpha);
    let (graph, c1, c2, est_fdr, est_power) = match thr {
        Ok(t) => {
            let d = decide_edges(std::iter::once(weights.clone()), cfg.n_genes, &fit.params, &t)?;
            (d.graph, t.c1, t.c2, t.est_fdr, t.power())
        }
        Err(Error::Unattainable(_)) => (SparseGraph::empty(cfg.n_genes), f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0),
        Err(e) => return Err(e),
    };
    let truth = &sim.truth.adjacency;
    let score = score(&graph, truth)?;
    let mut curves = Vec::new();
    if let Some(levels) = opts.sweep_levels {
        let mut truths = vec![(TruthKind::Adjacency, truth.clone())];
        if opts.cov_threshold_truth {
            let cov = sim.truth.true_cov.as_ref().expect("simulation carries its covariance");
            truths.push((TruthKind::CovThreshold, truth_by_cov_threshold(cov, sim.truth.sparsity.max(f64::MIN_POSITIVE))?));
        }
        for (kind, t) in &truths {
            curves.push(l2n_sweep(&weights, &fit.params, t, *kind, levels)?);
            curves.push(baseline_threshold_sweep(&weights, t, *kind, levels)?);
        }
    }
    Ok(ReplicateResult {
        replicate,
        seed,
        n_true_edges: truth.n_edges(),
        true_p1: sim.truth.p1,
        true_p2: sim.truth.p2,
        fit: fit.params,
        n_iterations: fit.n_iterations,
        rmse: fit.rmse,
        c1,
        c2,
        est_fdr,
        est_power,
        edges: graph.n_edges(),
        score,
        curves,
    })
}

/// Runs `opts.replicates` independent replicates of `config` in parallel. Replicate
/// `r` uses seed [`replicate_seed`]`(config.seed, r)`, so the report depends only on
/// the config. Failed replicates are listed without stopping the batch.
pub fn run_experiment(config: &NetworkConfig, opts: &ExperimentOptions) -> Result<ExperimentReport> {
    config.validate()?;
    if !(opts.fdr_alpha > 0.0 && opts.fdr_alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {} must lie in (0,1)", opts.fdr_alpha)));
    }
    let outcomes: Vec<Result<ReplicateResult>> =
        (0..opts.replicates).into_par_iter().map(|r| run_replicate(config, opts, r)).collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(res) => replicates.push(res),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push(ReplicateFailure {
                    replicate: r,
                    seed: replicate_seed(config.seed, r as u64),
                    error: e.to_string(),
                })
            }
        }
    }
    let col = |f: fn(&ReplicateResult) -> f64| Summary::of(&replicates.iter().map(f).collect::<Vec<_>>());
    Ok(ExperimentReport {
        config: config.clone(),
        fdr_alpha: opts.fdr_alpha,
        power: col(|r| r.score.power),
        observed_fdr: col(|r| r.score.observed_fdr),
        rmse: col(|r| r.rmse),
        p1_hat: col(|r| r.fit.p1),
        replicates,
        failures,
    })
}

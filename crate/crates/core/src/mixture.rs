//! The L2N mixture: a mean-zero normal null component for uncorrelated pairs and two
//! log-normal components for positively and negatively correlated pairs, fitted to
//! Fisher-z weights by EM.
//!
//! The null variance has two parts, the sampling variance of a Fisher-z weight,
//! `1/(N-3)`, and a random-effect term `sigma0_sq >= 0`.

use std::ops::AddAssign;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corr::all_weights;
use crate::decision::DecisionSummary;
use crate::error::{Error, Result};
use crate::expr_io::ExpressionMatrix;
use crate::numeric::{chunked_sum, ln_norm_pdf, norm_cdf, norm_sf, LN_SQRT_2PI};

/// Lower bound on the log-normal scale parameters.
pub const KAPPA_SQ_FLOOR: f64 = 1e-6;

/// Parameters of the three-component mixture plus the sample size `N` that fixes the
/// sampling part of the null variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2NParams {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub sigma0_sq: f64,
    pub theta1: f64,
    pub kappa1_sq: f64,
    pub theta2: f64,
    pub kappa2_sq: f64,
    pub n_samples: u32,
}

impl L2NParams {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p0, self.p1, self.p2];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!("mixture probabilities out of [0,1]: {ps:?}")));
        }
        if (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture probabilities do not sum to 1: {ps:?}")));
        }
        if self.n_samples < 4 {
            return Err(Error::TooFewSamples(self.n_samples as usize));
        }
        if !(self.sigma0_sq >= 0.0) {
            return Err(Error::invalid("sigma0_sq must be nonnegative"));
        }
        if !(self.kappa1_sq > 0.0 && self.kappa2_sq > 0.0) {
            return Err(Error::invalid("kappa1_sq and kappa2_sq must be positive"));
        }
        if !(self.theta1.is_finite() && self.theta2.is_finite()) {
            return Err(Error::invalid("theta1 and theta2 must be finite"));
        }
        Ok(())
    }

    /// Sampling variance of a Fisher-z weight, `1/(N-3)`.
    pub fn sampling_variance(&self) -> f64 {
        1.0 / (self.n_samples as f64 - 3.0)
    }

    /// Total null variance `1/(N-3) + sigma0_sq`.
    pub fn null_variance(&self) -> f64 {
        self.sampling_variance() + self.sigma0_sq
    }

    pub fn null_sd(&self) -> f64 {
        self.null_variance().sqrt()
    }

    pub fn ln_density_null(&self, w: f64) -> f64 {
        ln_norm_pdf(w, self.null_variance())
    }

    /// Log density of the positive component; `-inf` off its support.
    pub fn ln_density_pos(&self, w: f64) -> f64 {
        ln_lognormal_pdf(w, self.theta1, self.kappa1_sq)
    }

    /// Log density of the negative component (log-normal in `-w`); `-inf` for `w >= 0`.
    pub fn ln_density_neg(&self, w: f64) -> f64 {
        ln_lognormal_pdf(-w, self.theta2, self.kappa2_sq)
    }

    pub fn density_null(&self, w: f64) -> f64 {
        self.ln_density_null(w).exp()
    }

    pub fn density_pos(&self, w: f64) -> f64 {
        self.ln_density_pos(w).exp()
    }

    pub fn density_neg(&self, w: f64) -> f64 {
        self.ln_density_neg(w).exp()
    }

    /// Mixture density `p0 f0 + p1 f1 + p2 f2`.
    pub fn density(&self, w: f64) -> f64 {
        self.p0 * self.density_null(w) + self.p1 * self.density_pos(w) + self.p2 * self.density_neg(w)
    }

    /// Mixture CDF.
    pub fn cdf(&self, w: f64) -> f64 {
        let null = norm_cdf(w / self.null_sd());
        let pos = if w > 0.0 { norm_cdf((w.ln() - self.theta1) / self.kappa1_sq.sqrt()) } else { 0.0 };
        let neg = if w < 0.0 { norm_sf(((-w).ln() - self.theta2) / self.kappa2_sq.sqrt()) } else { 1.0 };
        self.p0 * null + self.p1 * pos + self.p2 * neg
    }

    /// Draws `n` weights from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let sd0 = self.null_sd();
        let (k1, k2) = (self.kappa1_sq.sqrt(), self.kappa2_sq.sqrt());
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let z: f64 = StandardNormal.sample(rng);
                if u < self.p0 {
                    sd0 * z
                } else if u < self.p0 + self.p1 {
                    (self.theta1 + k1 * z).exp()
                } else {
                    -(self.theta2 + k2 * z).exp()
                }
            })
            .collect()
    }

    /// Observed-data log-likelihood of `weights`.
    pub fn log_likelihood(&self, weights: &[f64]) -> f64 {
        let prepared = Prepared::new(weights);
        e_step(&prepared, self).ll
    }
}

fn ln_lognormal_pdf(x: f64, theta: f64, kappa_sq: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let l = x.ln();
    let d = l - theta;
    -l - 0.5 * d * d / kappa_sq - 0.5 * kappa_sq.ln() - LN_SQRT_2PI
}

/// Which non-null component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Positive,
    Negative,
}

/// Outcome of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    #[serde(flatten)]
    pub params: L2NParams,
    pub n_iterations: usize,
    pub rmse: f64,
    pub subsample_seed: u64,
    /// Number of genes the fit used (`G'`); 0 when fitted directly on weights.
    pub subsample_size: usize,
    pub loglik_trace: Vec<f64>,
    /// Components pinned at zero because no weight fell on their side.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionSummary>,
}

#[derive(Clone, Debug)]
pub struct EmOptions {
    /// Stop once the relative change in log-likelihood drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra runs from jittered starting points; the best likelihood wins.
    pub restarts: usize,
    /// Seed for the restart jitter.
    pub seed: u64,
    pub rmse_bins: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { tol: 1e-8, max_iter: 1000, restarts: 0, seed: 0, rmse_bins: DEFAULT_RMSE_BINS }
    }
}

pub const DEFAULT_RMSE_BINS: usize = 100;

/// Weights split by sign with the per-weight quantities EM needs.
struct Prepared {
    // (w^2, ln|w|)
    pos: Vec<[f64; 2]>,
    neg: Vec<[f64; 2]>,
    zeros: usize,
}

impl Prepared {
    fn new(weights: &[f64]) -> Self {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let mut zeros = 0;
        for &w in weights {
            if w > 0.0 {
                pos.push([w * w, w.ln()]);
            } else if w < 0.0 {
                neg.push([w * w, (-w).ln()]);
            } else {
                zeros += 1;
            }
        }
        Prepared { pos, neg, zeros }
    }

    fn len(&self) -> usize {
        self.pos.len() + self.neg.len() + self.zeros
    }
}

/// Sufficient statistics of one E-step.
#[derive(Clone, Copy, Debug, Default)]
struct Acc {
    ll: f64,
    r0: f64,
    r0_w2: f64,
    r1: f64,
    r1_l: f64,
    r1_l2: f64,
    r2: f64,
    r2_l: f64,
    r2_l2: f64,
}

impl AddAssign for Acc {
    fn add_assign(&mut self, o: Acc) {
        self.ll += o.ll;
        self.r0 += o.r0;
        self.r0_w2 += o.r0_w2;
        self.r1 += o.r1;
        self.r1_l += o.r1_l;
        self.r1_l2 += o.r1_l2;
        self.r2 += o.r2;
        self.r2_l += o.r2_l;
        self.r2_l2 += o.r2_l2;
    }
}

/// Partial E-step over one sign class: (ll, r0, r0 w^2, r, r l, r l^2).
fn side_stats(items: &[[f64; 2]], c0: f64, a0: f64, p: f64, theta: f64, kappa_sq: f64) -> [f64; 6] {
    let mut s = [0.0; 6];
    if p <= 0.0 {
        for &[w2, _] in items {
            s[0] += c0 - a0 * w2;
            s[1] += 1.0;
            s[2] += w2;
        }
        return s;
    }
    let c1 = p.ln() - 0.5 * kappa_sq.ln() - LN_SQRT_2PI;
    let a1 = 0.5 / kappa_sq;
    for &[w2, l] in items {
        let l0 = c0 - a0 * w2;
        let d = l - theta;
        let l1 = c1 - l - a1 * d * d;
        let diff = l1 - l0;
        let (r1, r0, ll) = if diff > 0.0 {
            let e = (-diff).exp();
            (1.0 / (1.0 + e), e / (1.0 + e), l1 + e.ln_1p())
        } else {
            let e = diff.exp();
            (e / (1.0 + e), 1.0 / (1.0 + e), l0 + e.ln_1p())
        };
        s[0] += ll;
        s[1] += r0;
        s[2] += r0 * w2;
        s[3] += r1;
        s[4] += r1 * l;
        s[5] += r1 * l * l;
    }
    s
}

#[derive(Default)]
struct Six([f64; 6]);

impl AddAssign for Six {
    fn add_assign(&mut self, o: Six) {
        for (a, b) in self.0.iter_mut().zip(o.0) {
            *a += b;
        }
    }
}

fn e_step(data: &Prepared, params: &L2NParams) -> Acc {
    let var0 = params.null_variance();
    let c0 = params.p0.ln() - 0.5 * var0.ln() - LN_SQRT_2PI;
    let a0 = 0.5 / var0;
    let pos = chunked_sum(&data.pos, |c| {
        Six(side_stats(c, c0, a0, params.p1, params.theta1, params.kappa1_sq))
    })
    .0;
    let neg = chunked_sum(&data.neg, |c| {
        Six(side_stats(c, c0, a0, params.p2, params.theta2, params.kappa2_sq))
    })
    .0;
    let z = data.zeros as f64;
    Acc {
        ll: pos[0] + neg[0] + z * c0,
        r0: pos[1] + neg[1] + z,
        r0_w2: pos[2] + neg[2],
        r1: pos[3],
        r1_l: pos[4],
        r1_l2: pos[5],
        r2: neg[3],
        r2_l: neg[4],
        r2_l2: neg[5],
    }
}

fn m_step(acc: &Acc, n: f64, prev: &L2NParams) -> L2NParams {
    let mut next = *prev;
    next.p1 = acc.r1 / n;
    next.p2 = acc.r2 / n;
    next.p0 = 1.0 - next.p1 - next.p2;
    if acc.r1 > 0.0 {
        next.theta1 = acc.r1_l / acc.r1;
        next.kappa1_sq = (acc.r1_l2 / acc.r1 - next.theta1 * next.theta1).max(KAPPA_SQ_FLOOR);
    }
    if acc.r2 > 0.0 {
        next.theta2 = acc.r2_l / acc.r2;
        next.kappa2_sq = (acc.r2_l2 / acc.r2 - next.theta2 * next.theta2).max(KAPPA_SQ_FLOOR);
    }
    if acc.r0 > 0.0 {
        next.sigma0_sq = (acc.r0_w2 / acc.r0 - prev.sampling_variance()).max(0.0);
    }
    next
}

/// Variance of N(0,1) restricted to `|z|` below its median, used to undo the
/// truncation when the null variance is seeded from the inner half of the weights.
fn inner_half_variance_factor() -> f64 {
    let z = crate::numeric::norm_quantile(0.75);
    let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    1.0 - 4.0 * z * phi
}

/// Starting point: weights beyond the 95th percentile of `|w|` seed the non-null
/// components (split by sign) and the inner half of `|w|` seeds the null variance.
pub fn initial_params(weights: &[f64], n_samples: u32) -> Result<L2NParams> {
    if weights.is_empty() {
        return Err(Error::invalid("no weights to fit"));
    }
    let mut abs: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = weights.len();
    let q = |p: f64| abs[((p * (n - 1) as f64).floor() as usize).min(n - 1)];
    let (q95, q50) = (q(0.95), q(0.50));

    let side = |sign: f64| -> (f64, f64, f64) {
        let mut logs: Vec<f64> =
            weights.iter().filter(|&&w| w * sign > q95).map(|w| (w * sign).ln()).collect();
        let n_side = weights.iter().filter(|&&w| w * sign > 0.0).count();
        if n_side == 0 {
            return (0.0, 0.0, 1.0);
        }
        let p = (logs.len().max(1) as f64) / n as f64;
        if logs.len() < 2 {
            // Too few seeds on this side: fall back to the side's largest weights.
            let mut side: Vec<f64> = weights.iter().filter(|&&w| w * sign > 0.0).map(|w| w * sign).collect();
            side.sort_by(|a, b| b.total_cmp(a));
            logs = side.iter().take(side.len().clamp(1, 20)).map(|w| w.ln()).collect();
        }
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        let v = logs.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / logs.len() as f64;
        (p, m, v.max(KAPPA_SQ_FLOOR).max(0.01))
    };
    let (p1, theta1, kappa1_sq) = side(1.0);
    let (p2, theta2, kappa2_sq) = side(-1.0);

    let inner: Vec<f64> = weights.iter().copied().filter(|w| w.abs() <= q50).collect();
    let inner_var = inner.iter().map(|w| w * w).sum::<f64>() / inner.len().max(1) as f64;
    let sampling = 1.0 / (n_samples as f64 - 3.0);
    let sigma0_sq = (inner_var / inner_half_variance_factor() - sampling).max(0.0);

    let params = L2NParams {
        p0: 1.0 - p1 - p2,
        p1,
        p2,
        sigma0_sq,
        theta1,
        kappa1_sq,
        theta2,
        kappa2_sq,
        n_samples,
    };
    params.validate()?;
    Ok(params)
}

/// Fits the mixture to `weights` by EM.
///
/// A side of the real line without any weight has its component pinned at zero
/// probability (reported in [`FitReport::degenerate`]) and the fit proceeds.
pub fn em_fit(
    weights: &[f64],
    n_samples: u32,
    init: Option<L2NParams>,
    opts: &EmOptions,
) -> Result<FitReport> {
    if n_samples < 4 {
        return Err(Error::TooFewSamples(n_samples as usize));
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::invalid(format!("weight {i} is not finite")));
    }
    let data = Prepared::new(weights);
    let mut degenerate = Vec::new();
    if data.pos.is_empty() {
        log::warn!("no positive weights: positive component fixed at zero");
        degenerate.push(Side::Positive);
    }
    if data.neg.is_empty() {
        log::warn!("no negative weights: negative component fixed at zero");
        degenerate.push(Side::Negative);
    }

    let mut start = match init {
        Some(p) => {
            p.validate()?;
            L2NParams { n_samples, ..p }
        }
        None => initial_params(weights, n_samples)?,
    };
    pin_degenerate(&mut start, &degenerate);

    let (mut best_params, mut best_trace) = run_em(&data, start, opts)?;
    if opts.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.restarts {
            let mut jittered = jitter(&start, &mut rng);
            pin_degenerate(&mut jittered, &degenerate);
            let (p, trace) = run_em(&data, jittered, opts)?;
            if trace.last() > best_trace.last() {
                best_params = p;
                best_trace = trace;
            }
        }
    }
    let rmse = rmse_fit(weights, &best_params, opts.rmse_bins)?;
    Ok(FitReport {
        params: best_params,
        n_iterations: best_trace.len(),
        rmse,
        subsample_seed: 0,
        subsample_size: 0,
        loglik_trace: best_trace,
        degenerate,
        decision: None,
    })
}

fn pin_degenerate(p: &mut L2NParams, degenerate: &[Side]) {
    for side in degenerate {
        match side {
            Side::Positive => p.p1 = 0.0,
            Side::Negative => p.p2 = 0.0,
        }
    }
    p.p0 = 1.0 - p.p1 - p.p2;
}

fn jitter(base: &L2NParams, rng: &mut ChaCha8Rng) -> L2NParams {
    let mut z = || -> f64 { StandardNormal.sample(rng) };
    let mut p = *base;
    p.theta1 += 0.5 * z();
    p.theta2 += 0.5 * z();
    p.kappa1_sq *= (0.5 * z()).exp();
    p.kappa2_sq *= (0.5 * z()).exp();
    p.p1 = (p.p1 * (0.5 * z()).exp()).min(0.45);
    p.p2 = (p.p2 * (0.5 * z()).exp()).min(0.45);
    p.p0 = 1.0 - p.p1 - p.p2;
    p.sigma0_sq *= (0.5 * z()).exp();
    p
}

fn run_em(data: &Prepared, mut params: L2NParams, opts: &EmOptions) -> Result<(L2NParams, Vec<f64>)> {
    let n = data.len() as f64;
    let mut trace: Vec<f64> = Vec::new();
    for iter in 0..opts.max_iter.max(1) {
        let acc = e_step(data, &params);
        if !acc.ll.is_finite() {
            return Err(Error::NonFinite(iter));
        }
        let converged = trace
            .last()
            .is_some_and(|&prev| (acc.ll - prev).abs() <= opts.tol * prev.abs());
        trace.push(acc.ll);
        if converged || iter + 1 == opts.max_iter {
            break;
        }
        params = m_step(&acc, n, &params);
    }
    Ok((params, trace))
}

/// Fits on the weights of `g_prime` genes drawn uniformly at random with `seed`.
pub fn fit_subsampled(
    expr: &ExpressionMatrix,
    g_prime: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<FitReport> {
    let g = expr.n_genes();
    if g_prime < 2 || g_prime > g {
        return Err(Error::invalid(format!("subsample size {g_prime} must lie in [2, {g}]")));
    }
    let genes = subsample_genes(g, g_prime, seed);
    let weights = if g_prime == g {
        all_weights(expr)?
    } else {
        all_weights(&expr.select_genes(&genes)?)?
    };
    let mut report = em_fit(&weights, expr.n_samples() as u32, None, opts)?;
    report.subsample_seed = seed;
    report.subsample_size = g_prime;
    Ok(report)
}

/// The sorted gene indices used by [`fit_subsampled`].
pub fn subsample_genes(g: usize, g_prime: usize, seed: u64) -> Vec<usize> {
    if g_prime >= g {
        return (0..g).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, g, g_prime).into_vec();
    idx.sort_unstable();
    idx
}

/// Root mean squared difference between the histogram density of `weights`
/// (`n_bins` equal-width bins over the data range) and the mixture density at the
/// bin midpoints.
pub fn rmse_fit(weights: &[f64], params: &L2NParams, n_bins: usize) -> Result<f64> {
    if n_bins < 10 {
        return Err(Error::invalid("rmse needs at least 10 bins"));
    }
    if weights.is_empty() {
        return Ok(0.0);
    }
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(0.0);
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &w in weights {
        let b = (((w - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let total = weights.len() as f64;
    let sse: f64 = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let mid = lo + (b as f64 + 0.5) * width;
            let d = c as f64 / (total * width) - params.density(mid);
            d * d
        })
        .sum();
    Ok((sse / n_bins as f64).sqrt())
}

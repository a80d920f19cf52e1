//! From fitted mixture parameters to edge calls.
//!
//! A pair is kept when its weight falls outside `[c2, c1]`. The cutoffs come from one
//! of three rules: a posterior-odds threshold `T`, a bound on the estimated Type-I
//! error, or a bound on the estimated false discovery rate. All tail masses use the
//! normal CDF in closed form (the log-normal CDF is the normal CDF of `ln w`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corr::WeightBatch;
use crate::error::{Error, Result};
use crate::expr_io::serde_inf;
use crate::graph::SparseGraph;
use crate::mixture::L2NParams;
use crate::numeric::{bisect_flip, ln_add_exp, ln_norm_sf, norm_cdf, norm_isf, norm_sf};

/// Largest |w| considered by the cutoff searches. Clamped Fisher weights stay below 10.
pub const SEARCH_LIMIT: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    Null,
    Positive,
    Negative,
}

impl Component {
    pub fn label(self) -> &'static str {
        match self {
            Component::Null => "C0",
            Component::Positive => "C1",
            Component::Negative => "C2",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "C0" => Some(Component::Null),
            "C1" => Some(Component::Positive),
            "C2" => Some(Component::Negative),
            _ => None,
        }
    }
}

/// Posterior membership probabilities of one weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorTriple {
    pub post_null: f64,
    pub post_pos: f64,
    pub post_neg: f64,
}

impl PosteriorTriple {
    /// Most probable component; ties go to the null.
    pub fn component(&self) -> Component {
        if self.post_null >= self.post_pos && self.post_null >= self.post_neg {
            Component::Null
        } else if self.post_pos > self.post_neg {
            Component::Positive
        } else {
            Component::Negative
        }
    }
}

/// Posterior probability of each component given `w`.
pub fn classify(w: f64, params: &L2NParams) -> PosteriorTriple {
    let term = |p: f64, ln_f: f64| if p > 0.0 { p.ln() + ln_f } else { f64::NEG_INFINITY };
    let l0 = term(params.p0, params.ln_density_null(w));
    let l1 = term(params.p1, params.ln_density_pos(w));
    let l2 = term(params.p2, params.ln_density_neg(w));
    let top = l0.max(l1).max(l2);
    if top == f64::NEG_INFINITY {
        return PosteriorTriple { post_null: 1.0, post_pos: 0.0, post_neg: 0.0 };
    }
    let (e0, e1, e2) = ((l0 - top).exp(), (l1 - top).exp(), (l2 - top).exp());
    let s = e0 + e1 + e2;
    PosteriorTriple { post_null: e0 / s, post_pos: e1 / s, post_neg: e2 / s }
}

/// How the cutoffs were chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rule {
    /// Posterior odds of non-null versus null must exceed `T`.
    Ratio(f64),
    /// Estimated Type-I error at most `alpha`.
    Type1(f64),
    /// Estimated false discovery rate at most `alpha`.
    Fdr(f64),
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Ratio(_) => "ratio",
            Rule::Type1(_) => "type1",
            Rule::Fdr(_) => "fdr",
        }
    }

    pub fn level(&self) -> f64 {
        match *self {
            Rule::Ratio(v) | Rule::Type1(v) | Rule::Fdr(v) => v,
        }
    }

    pub fn solve(&self, params: &L2NParams) -> Result<Thresholds> {
        match *self {
            Rule::Ratio(t) => thresholds_by_ratio(params, t),
            Rule::Type1(a) => thresholds_by_type1(params, a),
            Rule::Fdr(a) => thresholds_by_fdr(params, a),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name(), self.level())
    }
}

impl FromStr for Rule {
    type Err = Error;

    /// Parses `ratio:T`, `type1:alpha` or `fdr:alpha`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, value) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("rule {s:?} must look like fdr:0.05")))?;
        let v: f64 = value.parse().map_err(|_| Error::invalid(format!("bad rule level {value:?}")))?;
        match name {
            "ratio" if v > 1.0 => Ok(Rule::Ratio(v)),
            "ratio" => Err(Error::invalid("ratio threshold T must exceed 1")),
            "type1" | "fdr" if !(v > 0.0 && v < 1.0) => {
                Err(Error::invalid(format!("{name} level must lie in (0,1)")))
            }
            "type1" => Ok(Rule::Type1(v)),
            "fdr" => Ok(Rule::Fdr(v)),
            _ => Err(Error::invalid(format!("unknown rule {name:?}"))),
        }
    }
}

/// Cutoffs `c2 < 0 < c1` and the error estimates they imply. An absent side is
/// represented by an infinite cutoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub c1: f64,
    pub c2: f64,
    pub rule: Rule,
    pub est_type1: f64,
    pub est_type2: f64,
    pub est_fdr: f64,
}

impl Thresholds {
    fn new(params: &L2NParams, c1: f64, c2: f64, rule: Rule) -> Self {
        Thresholds {
            c1,
            c2,
            rule,
            est_type1: estimate_type1(params, c1, c2),
            est_type2: type2_at(params, c1, c2),
            est_fdr: estimate_fdr(params, c1, c2),
        }
    }

    pub fn power(&self) -> f64 {
        1.0 - self.est_type2
    }

    /// Component a weight is assigned to under these cutoffs.
    pub fn assign(&self, w: f64) -> Component {
        if w > self.c1 {
            Component::Positive
        } else if w < self.c2 {
            Component::Negative
        } else {
            Component::Null
        }
    }
}

/// Decision block of the fit report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub rule: String,
    #[serde(rename = "T_or_alpha")]
    pub t_or_alpha: f64,
    #[serde(with = "serde_inf")]
    pub c1: f64,
    #[serde(with = "serde_inf")]
    pub c2: f64,
    pub est_type1: f64,
    pub est_type2: f64,
    pub est_fdr: f64,
    pub power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub possible_edges: Option<usize>,
}

impl From<&Thresholds> for DecisionSummary {
    fn from(t: &Thresholds) -> Self {
        DecisionSummary {
            rule: t.rule.name().to_string(),
            t_or_alpha: t.rule.level(),
            c1: t.c1,
            c2: t.c2,
            est_type1: t.est_type1,
            est_type2: t.est_type2,
            est_fdr: t.est_fdr,
            power: t.power(),
            edges: None,
            possible_edges: None,
        }
    }
}

/// Log posterior odds (non-null over null) on one half-line, as a function of `|w|`.
#[derive(Clone, Copy, Debug)]
pub struct HalfLineOdds {
    ln_prior_odds: f64,
    theta: f64,
    kappa_sq: f64,
    var0: f64,
}

impl HalfLineOdds {
    /// `None` when the component has zero probability.
    pub fn new(params: &L2NParams, positive: bool) -> Option<Self> {
        let (p, theta, kappa_sq) = if positive {
            (params.p1, params.theta1, params.kappa1_sq)
        } else {
            (params.p2, params.theta2, params.kappa2_sq)
        };
        if p <= 0.0 {
            return None;
        }
        Some(HalfLineOdds { ln_prior_odds: p.ln() - params.p0.ln(), theta, kappa_sq, var0: params.null_variance() })
    }

    pub fn ln_odds(&self, x: f64) -> f64 {
        let l = x.ln();
        let d = l - self.theta;
        self.ln_prior_odds - l - 0.5 * d * d / self.kappa_sq - 0.5 * self.kappa_sq.ln()
            + 0.5 * x * x / self.var0
            + 0.5 * self.var0.ln()
    }

    /// `x * d/dx ln_odds`; its sign is the sign of the slope.
    fn slope_sign(&self, x: f64) -> f64 {
        x * x / self.var0 - 1.0 - (x.ln() - self.theta) / self.kappa_sq
    }

    /// Smallest `x` in `(0, SEARCH_LIMIT]` with `ln_odds(x) > level`.
    ///
    /// The odds are either increasing, or rise to a local maximum, fall, then rise
    /// again: `slope_sign` is convex in `ln x` with a single minimum at
    /// `x* = sqrt(var0 / (2 kappa_sq))`.
    pub fn first_crossing(&self, level: f64) -> Option<f64> {
        let x_star = (self.var0 / (2.0 * self.kappa_sq)).sqrt();
        let (rising_to, resumes_at) = if self.slope_sign(x_star) >= 0.0 || x_star >= SEARCH_LIMIT {
            (SEARCH_LIMIT, None)
        } else {
            // slope_sign falls below zero before x* and recovers after it
            let u_star = x_star.ln();
            let u_a = bisect_flip(-700.0, u_star, |u| self.slope_sign(u.exp()) <= 0.0);
            let u_b = bisect_flip(u_star, SEARCH_LIMIT.ln().max(u_star) + 1.0, |u| self.slope_sign(u.exp()) >= 0.0);
            (u_a.exp().min(SEARCH_LIMIT), Some(u_b.exp()))
        };
        if self.ln_odds(rising_to) > level {
            return Some(self.root_in(1e-300, rising_to, level));
        }
        match resumes_at {
            Some(b) if b < SEARCH_LIMIT && self.ln_odds(SEARCH_LIMIT) > level => {
                Some(self.root_in(b, SEARCH_LIMIT, level))
            }
            _ => None,
        }
    }

    /// Root on an increasing stretch `[lo, hi]` with `ln_odds(hi) > level`.
    fn root_in(&self, lo: f64, hi: f64, level: f64) -> f64 {
        let pass = |x: f64| self.ln_odds(x) > level;
        if pass(lo) {
            return lo;
        }
        let x = bisect_flip(lo.ln(), hi.ln(), |u| pass(u.exp())).exp();
        let below = x * (1.0 - 1e-12);
        if pass(below) || !pass(x) {
            x
        } else {
            bisect_flip(below, x, pass)
        }
    }
}

fn cutoffs_at_level(params: &L2NParams, level: f64) -> (f64, f64) {
    let c1 = HalfLineOdds::new(params, true)
        .and_then(|h| h.first_crossing(level))
        .unwrap_or(f64::INFINITY);
    let c2 = HalfLineOdds::new(params, false)
        .and_then(|h| h.first_crossing(level))
        .map(|x| -x)
        .unwrap_or(f64::NEG_INFINITY);
    (c1, c2)
}

/// Cutoffs where the posterior odds of each non-null component against the null
/// first exceed `t`. A side whose odds never exceed `t` (or whose component has zero
/// probability) gets an infinite cutoff: no edges on that side.
pub fn thresholds_by_ratio(params: &L2NParams, t: f64) -> Result<Thresholds> {
    params.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("ratio threshold {t} must be positive")));
    }
    let (c1, c2) = cutoffs_at_level(params, t.ln());
    if c1.is_infinite() && params.p1 > 0.0 {
        log::warn!("posterior odds never exceed {t} on the positive side");
    }
    if c2.is_infinite() && params.p2 > 0.0 {
        log::warn!("posterior odds never exceed {t} on the negative side");
    }
    Ok(Thresholds::new(params, c1, c2, Rule::Ratio(t)))
}

/// Cutoffs whose null tail mass, `p0 * (P0(w > c1) + P0(w < c2))`, equals `alpha`. The
/// budget is split between the tails in proportion `p1 : p2` (evenly when both are 0).
pub fn thresholds_by_type1(params: &L2NParams, alpha: f64) -> Result<Thresholds> {
    params.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} must lie in (0,1)")));
    }
    let total = params.p1 + params.p2;
    let share_pos = if total > 0.0 { params.p1 / total } else { 0.5 };
    let sd = params.null_sd();
    let cutoff = |share: f64| -> f64 {
        if share <= 0.0 {
            return f64::INFINITY;
        }
        let tail = (alpha * share / params.p0).min(0.5);
        (sd * norm_isf(tail)).max(f64::MIN_POSITIVE)
    };
    let c1 = cutoff(share_pos);
    let c2 = -cutoff(1.0 - share_pos);
    Ok(Thresholds::new(params, c1, c2, Rule::Type1(alpha)))
}

/// Cutoffs at which the estimated FDR equals `alpha`. The two cutoffs share a
/// common posterior-odds level (equal local false discovery rate at `c1` and `c2`),
/// found by bisection on that level.
pub fn thresholds_by_fdr(params: &L2NParams, alpha: f64) -> Result<Thresholds> {
    params.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} must lie in (0,1)")));
    }
    if params.p1 + params.p2 <= 0.0 {
        return Err(Error::Unattainable(alpha));
    }
    let extreme_c1 = if params.p1 > 0.0 { SEARCH_LIMIT } else { f64::INFINITY };
    let extreme_c2 = if params.p2 > 0.0 { -SEARCH_LIMIT } else { f64::NEG_INFINITY };
    if estimate_fdr(params, extreme_c1, extreme_c2) > alpha {
        return Err(Error::Unattainable(alpha));
    }

    let fdr_at = |level: f64| {
        let (c1, c2) = cutoffs_at_level(params, level);
        estimate_fdr(params, c1, c2)
    };
    let pass = |level: f64| fdr_at(level) <= alpha;

    let mut lo = -1.0;
    while pass(lo) {
        if lo < -1e4 {
            // Even rejecting everything keeps the estimate below alpha.
            let (c1, c2) = cutoffs_at_level(params, lo);
            return Ok(Thresholds::new(params, c1, c2, Rule::Fdr(alpha)));
        }
        lo = 2.0 * lo - 1.0;
    }
    let mut hi = 1.0;
    while !pass(hi) {
        hi = 2.0 * hi + 1.0;
        if hi > 1e7 {
            return Err(Error::Unattainable(alpha));
        }
    }
    let level = bisect_flip(lo, hi, pass);
    let (c1, c2) = cutoffs_at_level(params, level);
    Ok(Thresholds::new(params, c1, c2, Rule::Fdr(alpha)))
}

/// Estimated probability that a null weight falls outside `[c2, c1]`, scaled by `p0`.
pub fn estimate_type1(params: &L2NParams, c1: f64, c2: f64) -> f64 {
    let sd = params.null_sd();
    (params.p0 * (norm_sf(c1 / sd) + norm_cdf(c2 / sd))).clamp(0.0, 1.0)
}

/// Estimated fraction of null weights among those outside `[c2, c1]`; 0 when nothing
/// is outside.
pub fn estimate_fdr(params: &L2NParams, c1: f64, c2: f64) -> f64 {
    let sd = params.null_sd();
    let ln_p = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let ln_null = ln_p(params.p0) + ln_add_exp(ln_norm_sf(c1 / sd), ln_norm_sf(-c2 / sd));
    let ln_tail = |p: f64, c: f64, theta: f64, kappa_sq: f64| {
        if p <= 0.0 || c == f64::INFINITY {
            f64::NEG_INFINITY
        } else if c <= 0.0 {
            p.ln()
        } else {
            p.ln() + ln_norm_sf((c.ln() - theta) / kappa_sq.sqrt())
        }
    };
    let ln_pos = ln_tail(params.p1, c1, params.theta1, params.kappa1_sq);
    let ln_neg = ln_tail(params.p2, -c2, params.theta2, params.kappa2_sq);
    let ln_all = ln_add_exp(ln_null, ln_add_exp(ln_pos, ln_neg));
    if ln_null == f64::NEG_INFINITY || ln_all == f64::NEG_INFINITY {
        return 0.0;
    }
    (ln_null - ln_all).exp().clamp(0.0, 1.0)
}

fn type2_at(params: &L2NParams, c1: f64, c2: f64) -> f64 {
    let total = params.p1 + params.p2;
    if total <= 0.0 {
        return 0.0;
    }
    let below = |c: f64, theta: f64, kappa_sq: f64| {
        if c <= 0.0 {
            0.0
        } else if c == f64::INFINITY {
            1.0
        } else {
            norm_cdf((c.ln() - theta) / kappa_sq.sqrt())
        }
    };
    let missed = params.p1 * below(c1, params.theta1, params.kappa1_sq)
        + params.p2 * below(-c2, params.theta2, params.kappa2_sq);
    (missed / total).clamp(0.0, 1.0)
}

/// Estimated probability that a non-null weight falls inside `[c2, c1]`, conditional
/// on being non-null. Power is one minus this.
pub fn estimate_type2(params: &L2NParams, thresholds: &Thresholds) -> f64 {
    type2_at(params, thresholds.c1, thresholds.c2)
}

/// One retained (or, in dense references, classified) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeRecord {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
    pub posterior: PosteriorTriple,
    pub component: Component,
}

/// Records for the pairs of `batch` outside `[c2, c1]`, in batch order.
pub fn decide_batch(batch: &WeightBatch, params: &L2NParams, thresholds: &Thresholds) -> Vec<EdgeRecord> {
    batch
        .iter()
        .filter_map(|((a, b), w)| match thresholds.assign(w) {
            Component::Null => None,
            component => Some(EdgeRecord { a, b, weight: w, posterior: classify(w, params), component }),
        })
        .collect()
}

/// Retained edges and the graph they form.
#[derive(Clone, Debug)]
pub struct Decisions {
    pub graph: SparseGraph,
    pub records: Vec<EdgeRecord>,
}

/// Runs the cutoffs over a weight stream, calling `sink` for each retained edge in
/// stream order, and returns the resulting graph.
pub fn decide_edges_with<I, F>(
    stream: I,
    n_genes: usize,
    params: &L2NParams,
    thresholds: &Thresholds,
    mut sink: F,
) -> Result<SparseGraph>
where
    I: IntoIterator<Item = WeightBatch>,
    F: FnMut(&EdgeRecord) -> Result<()>,
{
    let mut edges = Vec::new();
    for batch in stream {
        for rec in decide_batch(&batch, params, thresholds) {
            sink(&rec)?;
            edges.push((rec.a, rec.b));
        }
    }
    SparseGraph::from_edges(n_genes, edges)
}

/// As [`decide_edges_with`], collecting the records.
pub fn decide_edges<I>(stream: I, n_genes: usize, params: &L2NParams, thresholds: &Thresholds) -> Result<Decisions>
where
    I: IntoIterator<Item = WeightBatch>,
{
    let mut records = Vec::new();
    let graph = decide_edges_with(stream, n_genes, params, thresholds, |r| {
        records.push(*r);
        Ok(())
    })?;
    Ok(Decisions { graph, records })
}

//! Scalar special functions shared by the mixture and decision code.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use libm::erfc;
use statrs::function::erf::erfc_inv;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal upper tail, `1 - norm_cdf(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Natural log of the standard normal upper tail, accurate far into the tail.
pub fn ln_norm_sf(x: f64) -> f64 {
    if x < 30.0 {
        return norm_sf(x).ln();
    }
    // Asymptotic expansion of the Mills ratio.
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - x.ln() - LN_SQRT_2PI + series.ln()
}

/// Inverse of the standard normal CDF.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Point `x` with `norm_sf(x) == q`.
pub fn norm_isf(q: f64) -> f64 {
    -norm_quantile(q)
}

pub fn ln_norm_pdf(x: f64, var: f64) -> f64 {
    -0.5 * x * x / var - 0.5 * (2.0 * PI * var).ln()
}

/// `ln(exp(a) + exp(b))` that tolerates `-inf` arguments.
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Chunk length used for deterministic parallel reductions.
pub(crate) const REDUCE_CHUNK: usize = 8192;

/// Maps fixed-size chunks in parallel and folds the partials in chunk order, so the
/// result does not depend on the number of worker threads.
pub(crate) fn chunked_sum<T, A, F>(items: &[T], map: F) -> A
where
    T: Sync,
    A: Send + Default + std::ops::AddAssign,
    F: Fn(&[T]) -> A + Sync,
{
    let partials: Vec<A> = items.par_chunks(REDUCE_CHUNK).map(&map).collect();
    let mut acc = A::default();
    for p in partials {
        acc += p;
    }
    acc
}

/// Bisection for the point where a monotone predicate flips from false to true.
/// `lo` must fail and `hi` must pass; returns the smallest passing point found once
/// the bracket can no longer shrink in floating point.
pub(crate) fn bisect_flip(mut lo: f64, mut hi: f64, pass: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pass(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#![allow(dead_code)]

use std::f64::consts::PI;

use coexnet::expr_io::ExpressionMatrix;
use coexnet::graph::SparseGraph;
use coexnet::mixture::L2NParams;

/// Adaptive Simpson quadrature.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, eps: f64, whole: f64, m: f64, fm: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps || delta.abs() <= 1e-14 * (left + right).abs() {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, eps / 2.0, left, lm, flm, depth - 1) + rec(f, m, fm, b, fb, eps / 2.0, right, rm, frm, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    // split into pieces so narrow peaks are not missed by the first estimate
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (x, y) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fb) = (f(x), f(y));
            let (m, fm, whole) = simpson(f, x, fa, y, fb);
            rec(f, x, fa, y, fb, eps / pieces as f64, whole, m, fm, 30)
        })
        .sum()
}

pub fn normal_pdf(w: f64, var: f64) -> f64 {
    (-(w * w) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

pub fn lognormal_pdf(x: f64, theta: f64, kappa_sq: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let d = x.ln() - theta;
    (-(d * d) / (2.0 * kappa_sq)).exp() / (x * (2.0 * PI * kappa_sq).sqrt())
}

pub fn var0(p: &L2NParams) -> f64 {
    1.0 / (p.n_samples as f64 - 3.0) + p.sigma0_sq
}

/// `[p0 f0, p1 f1, p2 f2]` at `w`, from the closed-form pdfs above.
pub fn terms(p: &L2NParams, w: f64) -> [f64; 3] {
    [
        p.p0 * normal_pdf(w, var0(p)),
        if w > 0.0 { p.p1 * lognormal_pdf(w, p.theta1, p.kappa1_sq) } else { 0.0 },
        if w < 0.0 { p.p2 * lognormal_pdf(-w, p.theta2, p.kappa2_sq) } else { 0.0 },
    ]
}

/// Mass of `p0 f0` outside `[c2, c1]`.
pub fn null_tail_mass(p: &L2NParams, c1: f64, c2: f64) -> f64 {
    let sd = var0(p).sqrt();
    let f = |w: f64| p.p0 * normal_pdf(w, var0(p));
    let upper = if c1.is_finite() { integrate(&f, c1, c1.max(0.0) + 40.0 * sd, 1e-15) } else { 0.0 };
    let lower = if c2.is_finite() { integrate(&f, c2.min(0.0) - 40.0 * sd, c2, 1e-15) } else { 0.0 };
    upper + lower
}

/// Mass of a log-normal density above `c`.
pub fn lognormal_upper(theta: f64, kappa_sq: f64, c: f64) -> f64 {
    if !c.is_finite() {
        return 0.0;
    }
    let top = (theta + 40.0 * kappa_sq.sqrt()).exp();
    if c >= top {
        return 0.0;
    }
    let f = |x: f64| lognormal_pdf(x, theta, kappa_sq);
    // integrate in log-spaced pieces: the density spans many scales
    let (la, lb) = (c.max(1e-300).ln(), top.ln());
    let g = |u: f64| {
        let x = u.exp();
        f(x) * x
    };
    integrate(&g, la.max(theta - 40.0 * kappa_sq.sqrt()), lb, 1e-15)
}

pub fn fdr_by_quadrature(p: &L2NParams, c1: f64, c2: f64) -> f64 {
    let m0 = null_tail_mass(p, c1, c2);
    let m1 = p.p1 * lognormal_upper(p.theta1, p.kappa1_sq, c1);
    let m2 = p.p2 * lognormal_upper(p.theta2, p.kappa2_sq, -c2);
    if m0 + m1 + m2 == 0.0 {
        0.0
    } else {
        m0 / (m0 + m1 + m2)
    }
}

pub fn type2_by_quadrature(p: &L2NParams, c1: f64, c2: f64) -> f64 {
    let miss1 = p.p1 * (1.0 - lognormal_upper(p.theta1, p.kappa1_sq, c1));
    let miss2 = p.p2 * (1.0 - lognormal_upper(p.theta2, p.kappa2_sq, -c2));
    (miss1 + miss2) / (p.p1 + p.p2)
}

/// Two-pass Pearson correlation computed independently of the library.
pub fn reference_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Dense `G x G` Fisher weights, reference path.
pub fn dense_weights(expr: &ExpressionMatrix) -> Vec<Vec<f64>> {
    let g = expr.n_genes();
    let mut w = vec![vec![0.0; g]; g];
    for a in 0..g {
        for b in a + 1..g {
            let r = reference_pearson(expr.row(a), expr.row(b)).clamp(-(1.0 - 1e-8), 1.0 - 1e-8);
            let z = 0.5 * ((1.0 + r) / (1.0 - r)).ln();
            w[a][b] = z;
            w[b][a] = z;
        }
    }
    w
}

pub fn random_expr(g: usize, n: usize, seed: u64) -> ExpressionMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // a shared factor gives some genuinely correlated pairs
    let factor: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut values = Vec::with_capacity(g * n);
    for gi in 0..g {
        let load = if gi % 7 == 0 { 2.0 } else if gi % 11 == 0 { -2.0 } else { 0.0 };
        for s in 0..n {
            values.push(load * factor[s] + rng.random::<f64>() - 0.5);
        }
    }
    ExpressionMatrix::new(
        (0..g).map(|i| format!("gene{i}")).collect(),
        (0..n).map(|i| format!("s{i}")).collect(),
        values,
    )
    .unwrap()
}

pub fn random_graph(n: usize, p: f64, seed: u64) -> SparseGraph {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut e = Vec::new();
    for a in 0..n as u32 {
        for b in a + 1..n as u32 {
            if rng.random::<f64>() < p {
                e.push((a, b));
            }
        }
    }
    SparseGraph::from_edges(n, e).unwrap()
}

/// Clustering coefficient by checking every neighbor pair.
pub fn brute_clustering(adj: &[Vec<bool>], m: usize) -> f64 {
    let nb: Vec<usize> = (0..adj.len()).filter(|&v| adj[m][v]).collect();
    let d = nb.len();
    if d <= 1 {
        return 0.0;
    }
    let mut links = 0;
    for i in 0..d {
        for j in i + 1..d {
            if adj[nb[i]][nb[j]] {
                links += 1;
            }
        }
    }
    links as f64 / (d * (d - 1) / 2) as f64
}

pub fn dense_adjacency(g: &SparseGraph) -> Vec<Vec<bool>> {
    let n = g.n_nodes();
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in g.edges() {
        adj[a as usize][b as usize] = true;
        adj[b as usize][a as usize] = true;
    }
    adj
}

/// Parameters close to a fit on the complete configuration.
pub fn complete_like_params() -> L2NParams {
    L2NParams {
        p0: 0.9604,
        p1: 0.0396,
        p2: 0.0,
        sigma0_sq: 0.0,
        theta1: -0.25,
        kappa1_sq: 0.25,
        theta2: -0.25,
        kappa2_sq: 0.25,
        n_samples: 100,
    }
}

pub fn eq4_params() -> L2NParams {
    L2NParams {
        p0: 0.8,
        p1: 0.15,
        p2: 0.05,
        sigma0_sq: 0.0,
        theta1: -0.25,
        kappa1_sq: 0.25,
        theta2: -0.25,
        kappa2_sq: 0.25,
        n_samples: 103,
    }
}

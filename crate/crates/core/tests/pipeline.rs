mod common;

use coexnet::corr::{read_weight_cache, write_weight_cache, WeightStream};
use coexnet::decision::{decide_edges, thresholds_by_fdr, thresholds_by_ratio, DecisionSummary};
use coexnet::expr_io::{parse_expression, read_edge_list, write_edge_list, ParseOptions};
use coexnet::graph::{write_node_stats, SparseGraph};
use coexnet::harness::{
    all_pairs, baseline_edge_sets, baseline_threshold_sweep, chance_tp, import_external_edges, run_experiment,
    sweep_totals, write_level_edges, ExperimentOptions, TruthKind,
};
use coexnet::mixture::{em_fit, fit_subsampled, EmOptions, FitReport};
use coexnet::netgen::{simulate, Family, NetworkConfig};
use common::*;

fn small_hub() -> NetworkConfig {
    let mut c = NetworkConfig::new(Family::Hub, 120, 40).with_seed(8);
    c.g = Some(12);
    c
}

#[test]
fn expression_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let expr = random_expr(15, 9, 3);
    let path = dir.path().join("expr.tsv");
    expr.write_tsv(&path).unwrap();
    let back = parse_expression(&path, &ParseOptions::default()).unwrap();
    assert_eq!(back, expr);
}

#[test]
fn edge_list_and_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(&small_hub()).unwrap();
    let expr = &sim.expr;
    let w = all_pairs(expr).unwrap();
    let fit = em_fit(&w.weights, 40, None, &EmOptions::default()).unwrap();
    let thr = thresholds_by_ratio(&fit.params, 5.0).unwrap();
    let d = decide_edges(WeightStream::new(expr, 100).unwrap(), 120, &fit.params, &thr).unwrap();
    assert!(!d.records.is_empty());
    let path = dir.path().join("edges.tsv");
    write_edge_list(&path, expr.gene_ids(), &d.records).unwrap();
    assert_eq!(read_edge_list(&path, expr.gene_ids()).unwrap(), d.records);

    let cache = dir.path().join("w.bin");
    let n = write_weight_cache(&cache, WeightStream::new(expr, 333).unwrap()).unwrap();
    assert_eq!(n, w.len());
    let batches = read_weight_cache(&cache, 1000).unwrap();
    let flat: Vec<f64> = batches.iter().flat_map(|b| b.weights.iter().copied()).collect();
    assert_eq!(flat, w.weights);
}

#[test]
fn fit_report_json_schema() {
    let sim = simulate(&small_hub()).unwrap();
    let mut fit = fit_subsampled(&sim.expr, 120, 0, &EmOptions::default()).unwrap();
    let direct = em_fit(&all_pairs(&sim.expr).unwrap().weights, 40, None, &EmOptions::default()).unwrap();
    assert_eq!(fit.params, direct.params);
    assert_eq!(fit_subsampled(&sim.expr, 60, 4, &EmOptions::default()).unwrap(), fit_subsampled(&sim.expr, 60, 4, &EmOptions::default()).unwrap());

    let thr = thresholds_by_fdr(&fit.params, 0.05).unwrap();
    fit.decision = Some(DecisionSummary::from(&thr));
    let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
    for key in [
        "p0", "p1", "p2", "sigma0_sq", "theta1", "kappa1_sq", "theta2", "kappa2_sq", "n_samples", "n_iterations",
        "rmse", "subsample_seed", "subsample_size", "loglik_trace",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let dec = &v["decision"];
    for key in ["rule", "T_or_alpha", "c1", "c2", "est_type1", "est_type2", "est_fdr", "power"] {
        assert!(dec.get(key).is_some(), "missing decision.{key}");
    }
    let back: FitReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, fit);
}

#[test]
fn one_sided_cutoffs_serialize_as_inf() {
    let mut p = eq4_params();
    p.p2 = 0.0;
    p.p0 = 1.0 - p.p1;
    let thr = thresholds_by_fdr(&p, 0.05).unwrap();
    assert_eq!(thr.c2, f64::NEG_INFINITY);
    let s = serde_json::to_string(&DecisionSummary::from(&thr)).unwrap();
    assert!(s.contains("\"-inf\""), "{s}");
    let back: DecisionSummary = serde_json::from_str(&s).unwrap();
    assert_eq!(back.c2, f64::NEG_INFINITY);
}

#[test]
fn huge_ratio_selects_nothing() {
    let mut last = (0.0, 0.0);
    for t in [1e2, 1e10, 1e100, 1e300] {
        let thr = thresholds_by_ratio(&eq4_params(), t).unwrap();
        assert!(thr.c1 > last.0 && thr.c2 < last.1);
        last = (thr.c1, thr.c2);
    }
    let thr = thresholds_by_ratio(&eq4_params(), 1e300).unwrap();
    let expr = random_expr(30, 10, 1);
    let d = decide_edges(WeightStream::new(&expr, 50).unwrap(), 30, &eq4_params(), &thr).unwrap();
    assert_eq!(d.graph.n_edges(), 0);
}

#[test]
fn imported_baseline_reproduces_its_curve() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(&small_hub()).unwrap();
    let w = all_pairs(&sim.expr).unwrap();
    let truth = &sim.truth.adjacency;
    let native = baseline_threshold_sweep(&w, truth, TruthKind::Adjacency, 10).unwrap();
    let totals = sweep_totals(truth.n_edges(), w.len(), 10);
    let sets = baseline_edge_sets(&w, &totals);
    let path = dir.path().join("levels.tsv");
    write_level_edges(std::fs::File::create(&path).unwrap(), sim.expr.gene_ids(), &sets).unwrap();
    let imported = import_external_edges(&path, "threshold", sim.expr.gene_ids(), truth, TruthKind::Adjacency).unwrap();
    // an empty level has no rows, so only the non-empty levels come back
    let expect: Vec<_> = native.points.iter().filter(|p| p.total_detected > 0).cloned().collect();
    assert_eq!(imported.points, expect);

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let c = import_external_edges(&empty, "mb", sim.expr.gene_ids(), truth, TruthKind::Adjacency).unwrap();
    assert!(c.points.is_empty());

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, format!("total_detected\ttrue_positives\n2000\t{}\n", truth.n_edges() + 1)).unwrap();
    assert!(import_external_edges(&bad, "mb", sim.expr.gene_ids(), truth, TruthKind::Adjacency).is_err());
}

#[test]
fn chance_line_is_linear() {
    assert_eq!(chance_tp(0.0, 0.1), 0.0);
    assert!((chance_tp(5041.0, 48_725.0 / 499_500.0) - 491.7).abs() < 0.1);
}

#[test]
fn experiment_is_deterministic() {
    let mut c = NetworkConfig::new(Family::Complete, 150, 60).with_seed(42);
    c.block_size = Some(30);
    c.null_sd = 0.0;
    c.theta1 = 0.25;
    let opts = ExperimentOptions { replicates: 3, sweep_levels: Some(8), ..Default::default() };
    let a = run_experiment(&c, &opts).unwrap();
    let b = run_experiment(&c, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.replicates.len(), 3);
    assert!(a.failures.is_empty());
    let seeds: Vec<u64> = a.replicates.iter().map(|r| r.seed).collect();
    assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2]);
    let json = serde_json::to_string(&a).unwrap();
    let back: coexnet::harness::ExperimentReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
}

#[test]
fn node_stats_of_clique_and_empty_graph() {
    let clique = SparseGraph::from_edges(6, (0..5u32).flat_map(|a| (a + 1..5).map(move |b| (a, b)))).unwrap();
    let stats = clique.stats_table();
    for s in &stats[..5] {
        assert_eq!(s.degree, 4);
        assert_eq!(s.gamma_d, 4.0);
    }
    assert_eq!(stats[5].degree, 0);
    let ids: Vec<String> = (0..6).map(|i| format!("g{i}")).collect();
    let mut out = Vec::new();
    write_node_stats(&mut out, &SparseGraph::empty(6).stats_table(), &ids).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().skip(1).all(|l| l.ends_with("\t0\t0\t0")), "{text}");
}

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use coexnet::corr::{read_weight_cache, write_weight_cache, WeightBatch, WeightStream, DEFAULT_BLOCK_SIZE};
use coexnet::decision::{decide_edges_with, DecisionSummary, Rule};
use coexnet::expr_io::{
    parse_expression_reporting, read_edge_pairs, read_gene_list, write_gene_list, EdgeListWriter, ExpressionMatrix,
    ParseOptions,
};
use coexnet::graph::{bitmap_order, symmetric_difference_nodes, write_node_stats, write_pbm_file, SparseGraph};
use coexnet::harness::{
    import_external_edges, run_experiment, write_curves_tsv, ExperimentOptions, ExperimentReport, TruthKind,
};
use coexnet::mixture::{fit_subsampled, EmOptions, FitReport};
use coexnet::netgen::{replicate_seed, simulate, NetworkConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::failure::{with_path, CliResult, Failure};
use crate::manifest::ManifestBuilder;
use crate::settings::{check_keys, flag_overrides, resolve};
use crate::{EvaluateFlags, FitFlags, InferFlags, SimulateFlags, StatsFlags};

const NETWORK_KEYS: &[&str] = &[
    "family", "G", "N", "S", "p", "g", "v", "u", "theta1", "kappa1_sq", "theta2", "kappa2_sq", "null_sd", "m",
    "seed_nodes", "seed",
];

/// Settings shared by every command.
#[derive(Debug, Deserialize)]
struct Common {
    #[serde(default)]
    seed: u64,
    threads: Option<usize>,
    #[serde(default = "default_block_size")]
    block_size: usize,
}

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}

pub struct Context {
    config: Option<PathBuf>,
    file: Map<String, Value>,
    global: Map<String, Value>,
    seed: u64,
    threads: usize,
    block_size: usize,
}

impl Context {
    pub fn new(config: Option<PathBuf>, file: Map<String, Value>, global: Map<String, Value>) -> CliResult<Self> {
        let pick = |m: &Map<String, Value>| -> Map<String, Value> {
            m.iter().filter(|(k, _)| ["seed", "threads", "block_size"].contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect()
        };
        let common: Common = resolve(vec![pick(&file), pick(&global)])?;
        if common.block_size == 0 {
            return Err(Failure::invalid("block_size must be positive"));
        }
        if common.threads == Some(0) {
            return Err(Failure::invalid("threads must be positive"));
        }
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(t) = common.threads {
            pool = pool.num_threads(t);
        }
        // a second build in the same process fails harmlessly
        let _ = pool.build_global();
        Ok(Context {
            config,
            file,
            global,
            seed: common.seed,
            threads: rayon::current_num_threads(),
            block_size: common.block_size,
        })
    }

    /// File values, then global flags, then the command's own flags, without the
    /// thread and block-size keys.
    fn merged<T: Serialize>(&self, flags: &T) -> CliResult<Map<String, Value>> {
        let mut m = self.file.clone();
        m.extend(self.global.clone());
        m.extend(flag_overrides(flags)?);
        m.remove("threads");
        m.remove("block_size");
        Ok(m)
    }

    fn manifest(&self, command: &str) -> ManifestBuilder {
        ManifestBuilder::new(command, self.config.clone(), self.seed, self.threads, self.block_size)
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    with_path(std::fs::create_dir_all(dir), dir)
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::io(format!("{}: no such file", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    with_path(std::fs::write(path, text + "\n"), path)
}

fn ok(command: &str, fields: Value) -> Value {
    let mut out = json!({ "status": "ok", "command": command });
    if let (Value::Object(o), Value::Object(f)) = (&mut out, fields) {
        o.extend(f);
    }
    out
}

fn read_expression(path: &Path, drop_missing: bool) -> CliResult<(ExpressionMatrix, usize)> {
    require_file(path)?;
    let opts = ParseOptions { drop_incomplete: drop_missing, ..Default::default() };
    let (expr, dropped) = parse_expression_reporting(path, &opts)?;
    Ok((expr, dropped.len()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitSettings {
    expr: PathBuf,
    out_dir: PathBuf,
    g_prime: Option<usize>,
    #[serde(default)]
    restarts: usize,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default)]
    drop_missing: bool,
    #[serde(default)]
    cache_weights: bool,
    #[serde(default)]
    seed: u64,
}

fn default_max_iter() -> usize {
    EmOptions::default().max_iter
}

fn default_tol() -> f64 {
    EmOptions::default().tol
}

pub fn fit(ctx: &Context, flags: &FitFlags) -> CliResult<Value> {
    let s: FitSettings = resolve(vec![ctx.merged(flags)?])?;
    let mut manifest = ctx.manifest("fit");
    manifest.settings(&s)?;
    manifest.input("expr", &s.expr);
    let (expr, dropped) = read_expression(&s.expr, s.drop_missing)?;
    let g_prime = s.g_prime.unwrap_or(expr.n_genes());
    let opts = EmOptions { tol: s.tol, max_iter: s.max_iter, restarts: s.restarts, seed: s.seed, ..Default::default() };
    let report = fit_subsampled(&expr, g_prime, s.seed, &opts)?;

    create_dir(&s.out_dir)?;
    let report_path = s.out_dir.join("fit.json");
    write_json(&report_path, &report)?;
    manifest.output(&report_path);
    if s.cache_weights {
        let cache = s.out_dir.join("weights.bin");
        write_weight_cache(&cache, WeightStream::new(&expr, ctx.block_size)?)?;
        manifest.output(&cache);
    }
    let manifest_path = manifest.finish(&s.out_dir)?;
    let p = &report.params;
    Ok(ok(
        "fit",
        json!({
            "p0": p.p0, "p1": p.p1, "p2": p.p2, "rmse": report.rmse,
            "n_iterations": report.n_iterations, "genes": expr.n_genes(), "g_prime": g_prime,
            "dropped_genes": dropped, "report": report_path, "manifest": manifest_path,
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InferSettings {
    expr: PathBuf,
    fit: PathBuf,
    rule: String,
    out_dir: PathBuf,
    weights: Option<PathBuf>,
    #[serde(default)]
    drop_missing: bool,
    #[serde(default)]
    seed: u64,
}

pub fn infer(ctx: &Context, flags: &InferFlags) -> CliResult<Value> {
    let s: InferSettings = resolve(vec![ctx.merged(flags)?])?;
    let mut manifest = ctx.manifest("infer");
    manifest.settings(&s)?;
    manifest.input("expr", &s.expr);
    manifest.input("fit", &s.fit);
    let rule: Rule = s.rule.parse()?;
    require_file(&s.fit)?;
    let text = with_path(std::fs::read_to_string(&s.fit), &s.fit)?;
    let mut report: FitReport =
        serde_json::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", s.fit.display())))?;
    report.params.validate()?;
    let (expr, _) = read_expression(&s.expr, s.drop_missing)?;
    if report.params.n_samples as usize != expr.n_samples() {
        return Err(Failure::invalid(format!(
            "fit used N = {} samples but the expression matrix has {}",
            report.params.n_samples,
            expr.n_samples()
        )));
    }
    let thresholds = rule.solve(&report.params)?;

    let stream: Box<dyn Iterator<Item = WeightBatch>> = match &s.weights {
        Some(path) => {
            require_file(path)?;
            manifest.input("weights", path);
            let batches = read_weight_cache(path, ctx.block_size)?;
            let count: usize = batches.iter().map(WeightBatch::len).sum();
            if count != expr.n_pairs() {
                return Err(Failure::invalid(format!(
                    "weight cache holds {count} pairs, the expression matrix has {}",
                    expr.n_pairs()
                )));
            }
            Box::new(batches.into_iter())
        }
        None => Box::new(WeightStream::new(&expr, ctx.block_size)?),
    };

    create_dir(&s.out_dir)?;
    let edges_path = s.out_dir.join("edges.tsv");
    let mut writer = EdgeListWriter::create(&edges_path, expr.gene_ids())?;
    let graph = decide_edges_with(stream, expr.n_genes(), &report.params, &thresholds, |r| writer.write(r))?;
    writer.finish()?;
    manifest.output(&edges_path);

    let mut decision = DecisionSummary::from(&thresholds);
    decision.edges = Some(graph.n_edges());
    decision.possible_edges = Some(expr.n_pairs());
    let decision_path = s.out_dir.join("decision.json");
    write_json(&decision_path, &decision)?;
    manifest.output(&decision_path);
    report.decision = Some(decision.clone());
    let report_path = s.out_dir.join("report.json");
    write_json(&report_path, &report)?;
    manifest.output(&report_path);
    let manifest_path = manifest.finish(&s.out_dir)?;

    let mut fields = serde_json::to_value(&decision)?;
    if let Value::Object(o) = &mut fields {
        o.insert("p1_hat".into(), json!(report.params.p1));
        o.insert("p2_hat".into(), json!(report.params.p2));
        o.insert("edge_list".into(), json!(edges_path));
        o.insert("manifest".into(), json!(manifest_path));
    }
    Ok(ok("infer", fields))
}

/// Splits merged settings into the network config and the command's own keys.
fn split_network(mut merged: Map<String, Value>) -> CliResult<(NetworkConfig, Map<String, Value>)> {
    let net: Map<String, Value> = NETWORK_KEYS.iter().filter_map(|k| merged.remove(*k).map(|v| (k.to_string(), v))).collect();
    let config: NetworkConfig = resolve(vec![net])?;
    config.validate()?;
    Ok((config, merged))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateSettings {
    out_dir: PathBuf,
    replicate: Option<u64>,
}

#[derive(Serialize)]
struct TruthSummary<'a> {
    config: &'a NetworkConfig,
    n_true_edges: usize,
    sparsity: f64,
    p1: f64,
    p2: f64,
    repair_passes: Option<usize>,
    repair_max_abs_change: Option<f64>,
}

pub fn simulate_cmd(ctx: &Context, flags: &SimulateFlags) -> CliResult<Value> {
    let (mut config, rest) = split_network(ctx.merged(flags)?)?;
    let s: SimulateSettings = resolve(vec![rest])?;
    if let Some(r) = s.replicate {
        config.seed = replicate_seed(config.seed, r);
    }
    let mut manifest = ctx.manifest("simulate");
    manifest.settings(&json!({ "network": &config, "out_dir": &s.out_dir, "replicate": s.replicate }))?;
    let sim = simulate(&config)?;

    create_dir(&s.out_dir)?;
    let expr_path = s.out_dir.join("expression.tsv");
    sim.expr.write_tsv(&expr_path)?;
    manifest.output(&expr_path);
    let truth_path = s.out_dir.join("truth_edges.tsv");
    {
        let mut out = BufWriter::new(with_path(File::create(&truth_path), &truth_path)?);
        let ids = sim.expr.gene_ids();
        writeln!(out, "gene_a\tgene_b")?;
        for &(a, b) in sim.truth.adjacency.edges() {
            writeln!(out, "{}\t{}", ids[a as usize], ids[b as usize])?;
        }
        out.flush()?;
    }
    manifest.output(&truth_path);
    let t = &sim.truth;
    let summary = TruthSummary {
        config: &config,
        n_true_edges: t.adjacency.n_edges(),
        sparsity: t.sparsity,
        p1: t.p1,
        p2: t.p2,
        repair_passes: t.repair.map(|r| r.passes),
        repair_max_abs_change: t.repair.map(|r| r.max_abs_change),
    };
    let summary_path = s.out_dir.join("truth.json");
    write_json(&summary_path, &summary)?;
    manifest.output(&summary_path);
    let manifest_path = manifest.finish(&s.out_dir)?;
    Ok(ok(
        "simulate",
        json!({
            "family": config.family.name(), "genes": config.n_genes, "samples": config.n_samples,
            "seed": config.seed, "n_true_edges": summary.n_true_edges,
            "expression": expr_path, "truth": truth_path, "manifest": manifest_path,
        }),
    ))
}


#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateSettings {
    out_dir: PathBuf,
    #[serde(default = "default_replicates")]
    replicates: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_levels")]
    levels: usize,
    #[serde(default)]
    cov_truth: bool,
    #[serde(default)]
    theta1_values: Vec<f64>,
    #[serde(default)]
    import: Vec<String>,
}

fn default_replicates() -> usize {
    20
}
fn default_alpha() -> f64 {
    0.01
}
fn default_levels() -> usize {
    30
}

const POWER_HEADER: &str = "theta1\treplicates\tpower_mean\tpower_sd\tpower_lo\tpower_hi\tfdr_mean\tp1_hat_mean\trmse_mean";

pub fn evaluate(ctx: &Context, flags: &EvaluateFlags) -> CliResult<Value> {
    let (config, rest) = split_network(ctx.merged(flags)?)?;
    let s: EvaluateSettings = resolve(vec![rest])?;
    if s.replicates == 0 {
        return Err(Failure::invalid("replicates must be positive"));
    }
    if s.levels == 1 {
        return Err(Failure::invalid("levels must be 0 or at least 2"));
    }
    if !s.import.is_empty() && s.theta1_values.len() > 1 {
        return Err(Failure::invalid("--import needs a single experiment"));
    }
    let imports = s
        .import
        .iter()
        .map(|spec| {
            let (name, path) =
                spec.split_once('=').ok_or_else(|| Failure::invalid(format!("import {spec:?} must be name=path")))?;
            require_file(Path::new(path))?;
            Ok((name.to_string(), PathBuf::from(path)))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut manifest = ctx.manifest("evaluate");
    manifest.settings(&json!({ "network": &config, "evaluate": &s }))?;
    for (name, path) in &imports {
        manifest.input(name, path);
    }
    let opts = ExperimentOptions {
        replicates: s.replicates,
        fdr_alpha: s.alpha,
        sweep_levels: (s.levels > 0).then_some(s.levels),
        cov_threshold_truth: s.cov_truth,
        em: EmOptions::default(),
    };
    let configs: Vec<NetworkConfig> = if s.theta1_values.is_empty() {
        vec![config.clone()]
    } else {
        s.theta1_values.iter().map(|&t| NetworkConfig { theta1: t, ..config.clone() }).collect()
    };
    create_dir(&s.out_dir)?;

    let mut power_rows = Vec::new();
    let many = configs.len() > 1;
    for (i, cfg) in configs.iter().enumerate() {
        let mut report = run_experiment(cfg, &opts)?;
        if report.replicates.is_empty() {
            let first = report.failures.first().map(|f| f.error.clone()).unwrap_or_default();
            return Err(Failure { code: crate::failure::EXIT_NUMERIC, message: format!("every replicate failed: {first}") });
        }
        if !imports.is_empty() {
            score_imports(cfg, &imports, &mut report)?;
        }
        let suffix = if many { format!("_{i}") } else { String::new() };
        let report_path = s.out_dir.join(format!("report{suffix}.json"));
        write_json(&report_path, &report)?;
        manifest.output(&report_path);
        if report.replicates.iter().any(|r| !r.curves.is_empty()) {
            let curves_path = s.out_dir.join(format!("curves{suffix}.tsv"));
            let curves: Vec<(usize, &_)> =
                report.replicates.iter().flat_map(|r| r.curves.iter().map(move |c| (r.replicate, c))).collect();
            let out = BufWriter::new(with_path(File::create(&curves_path), &curves_path)?);
            write_curves_tsv(out, &curves)?;
            manifest.output(&curves_path);
        }
        power_rows.push((cfg.theta1, report));
    }

    let power_path = s.out_dir.join("power.tsv");
    {
        let mut out = BufWriter::new(with_path(File::create(&power_path), &power_path)?);
        writeln!(out, "{POWER_HEADER}")?;
        for (theta, r) in &power_rows {
            let p = r.power.as_ref().expect("at least one replicate");
            let f = r.observed_fdr.as_ref().expect("at least one replicate");
            let p1 = r.p1_hat.as_ref().expect("at least one replicate");
            let rm = r.rmse.as_ref().expect("at least one replicate");
            writeln!(
                out,
                "{theta}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.replicates.len(),
                p.mean,
                p.sd,
                p.band.0,
                p.band.1,
                f.mean,
                p1.mean,
                rm.mean
            )?;
        }
        out.flush()?;
    }
    manifest.output(&power_path);
    let manifest_path = manifest.finish(&s.out_dir)?;
    let rows: Vec<Value> = power_rows
        .iter()
        .map(|(t, r)| {
            json!({
                "theta1": t,
                "replicates": r.replicates.len(),
                "failures": r.failures.len(),
                "power": r.power.as_ref().map(|x| x.mean),
                "observed_fdr": r.observed_fdr.as_ref().map(|x| x.mean),
            })
        })
        .collect();
    Ok(ok(
        "evaluate",
        json!({ "family": config.family.name(), "experiments": rows, "power_table": power_path, "manifest": manifest_path }),
    ))
}

/// Scores external edge lists against the truth of replicate 0.
fn score_imports(config: &NetworkConfig, imports: &[(String, PathBuf)], report: &mut ExperimentReport) -> CliResult<()> {
    let Some(rep0) = report.replicates.iter_mut().find(|r| r.replicate == 0) else {
        return Err(Failure::invalid("replicate 0 failed, so imported results cannot be scored"));
    };
    let cfg = NetworkConfig { seed: rep0.seed, ..config.clone() };
    let sim = simulate(&cfg)?;
    for (name, path) in imports {
        let curve = import_external_edges(path, name, sim.expr.gene_ids(), &sim.truth.adjacency, TruthKind::Adjacency)?;
        rep0.curves.push(curve);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsSettings {
    a: PathBuf,
    b: Option<PathBuf>,
    genes: Option<PathBuf>,
    expr: Option<PathBuf>,
    out_dir: PathBuf,
    #[serde(default)]
    seed: u64,
}

/// Gene ids in first-appearance order over the first two columns of edge files.
fn ids_in_edge_files(paths: &[&Path]) -> CliResult<Vec<String>> {
    let mut seen = std::collections::HashSet::new();
    let mut ids = Vec::new();
    for path in paths {
        let reader = BufReader::new(with_path(File::open(path), path)?);
        for (no, line) in reader.lines().enumerate() {
            let line = with_path(line, path)?;
            if no == 0 || line.trim().is_empty() {
                continue;
            }
            for id in line.split('\t').take(2) {
                if seen.insert(id.to_string()) {
                    ids.push(id.to_string());
                }
            }
        }
    }
    Ok(ids)
}

fn load_graph(path: &Path, ids: &[String]) -> CliResult<SparseGraph> {
    Ok(SparseGraph::from_edges(ids.len(), read_edge_pairs(path, ids)?)?)
}

pub fn stats(ctx: &Context, flags: &StatsFlags) -> CliResult<Value> {
    let merged = ctx.merged(flags)?;
    check_keys(&merged, &["a", "b", "genes", "expr", "out_dir", "seed"])?;
    let s: StatsSettings = resolve(vec![merged])?;
    let mut manifest = ctx.manifest("stats");
    manifest.settings(&s)?;
    require_file(&s.a)?;
    manifest.input("a", &s.a);
    if let Some(b) = &s.b {
        require_file(b)?;
        manifest.input("b", b);
    }
    let ids = match (&s.genes, &s.expr) {
        (Some(_), Some(_)) => return Err(Failure::invalid("give either genes or expr, not both")),
        (Some(g), None) => {
            require_file(g)?;
            manifest.input("genes", g);
            read_gene_list(g)?
        }
        (None, Some(e)) => {
            manifest.input("expr", e);
            read_expression(e, true)?.0.gene_ids().to_vec()
        }
        (None, None) => {
            let mut files = vec![s.a.as_path()];
            files.extend(s.b.as_deref());
            ids_in_edge_files(&files)?
        }
    };
    let ga = load_graph(&s.a, &ids)?;
    let gb = s.b.as_deref().map(|b| load_graph(b, &ids)).transpose()?;

    create_dir(&s.out_dir)?;
    let write_stats = |name: &str, g: &SparseGraph| -> CliResult<PathBuf> {
        let path = s.out_dir.join(name);
        let out = BufWriter::new(with_path(File::create(&path), &path)?);
        with_path(write_node_stats(out, &g.stats_table(), &ids), &path)?;
        Ok(path)
    };
    manifest.output(&write_stats("node_stats_a.tsv", &ga)?);
    let order = bitmap_order(&ga);
    let mut fields = json!({ "nodes": ids.len(), "edges_a": ga.n_edges() });
    if let Some(gb) = &gb {
        manifest.output(&write_stats("node_stats_b.tsv", gb)?);
        let diff = symmetric_difference_nodes(&ga, gb)?;
        let diff_path = s.out_dir.join("symdiff_nodes.txt");
        let diff_ids: Vec<String> = diff.iter().map(|&m| ids[m].clone()).collect();
        write_gene_list(&diff_path, &diff_ids)?;
        manifest.output(&diff_path);
        fields["edges_b"] = json!(gb.n_edges());
        fields["symdiff_nodes"] = json!(diff.len());
    }
    let pbm_path = s.out_dir.join("adjacency.pbm");
    write_pbm_file(&pbm_path, &ga, gb.as_ref(), &order)?;
    manifest.output(&pbm_path);
    fields["manifest"] = json!(manifest.finish(&s.out_dir)?);
    Ok(ok("stats", fields))
}

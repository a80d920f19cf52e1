//! `coexnet`: fit, infer, simulate, evaluate and stats from the command line.
//!
//! Every command prints one JSON line on stdout, `{"status":"ok",...}` or
//! `{"status":"error",...}`, and exits 0 on success, 2 on invalid input, 3 on a
//! numeric failure and 4 on an I/O error.

mod commands;
mod failure;
mod manifest;
mod settings;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use failure::{CliResult, Failure, EXIT_INVALID};

#[derive(Parser, Debug)]
#[command(name = "coexnet", version, about = "Sparse co-expression networks from an L2N mixture fit")]
struct Cli {
    #[command(flatten)]
    global: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Serialize)]
pub struct GlobalFlags {
    /// TOML or JSON file of settings; flags override its values.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Master seed for subsampling, restarts and simulation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Pairs per weight batch when streaming.
    #[arg(long, global = true)]
    pub block_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the mixture to the weights of a random gene subset.
    Fit(FitFlags),
    /// Classify every pair against a fitted model and write the edge list.
    Infer(InferFlags),
    /// Generate a synthetic network and expression matrix.
    Simulate(SimulateFlags),
    /// Run replicated simulate-fit-decide-score experiments.
    Evaluate(EvaluateFlags),
    /// Node statistics, symmetric difference and bitmaps of edge lists.
    Stats(StatsFlags),
}

#[derive(Args, Debug, Serialize)]
pub struct FitFlags {
    /// Expression matrix (genes x samples, TSV or CSV).
    #[arg(long)]
    pub expr: Option<PathBuf>,
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
    /// Genes in the fitting subset (default: all).
    #[arg(long)]
    pub g_prime: Option<usize>,
    /// Extra EM runs from jittered starts.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Drop genes with missing values instead of failing.
    #[arg(long)]
    pub drop_missing: bool,
    /// Also write every pair's weight to `weights.bin` for `infer --weights`.
    #[arg(long)]
    pub cache_weights: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct InferFlags {
    #[arg(long)]
    pub expr: Option<PathBuf>,
    /// Fit report written by `fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// `ratio:T`, `type1:alpha` or `fdr:alpha`.
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
    /// Weight cache from `fit --cache-weights`, read instead of recomputing.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub drop_missing: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct NetworkFlags {
    /// Network family, e.g. `hub` or `complete`.
    #[arg(long)]
    pub family: Option<String>,
    /// Number of genes.
    #[arg(long = "genes")]
    #[serde(rename = "G")]
    pub n_genes: Option<usize>,
    /// Number of samples.
    #[arg(long = "samples")]
    #[serde(rename = "N")]
    pub n_samples: Option<usize>,
    /// Group count or bandwidth.
    #[arg(long)]
    pub g: Option<usize>,
    /// Edge probability.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta1: Option<f64>,
    #[arg(long)]
    pub null_sd: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub network: NetworkFlags,
    /// Write replicate `r` of an `evaluate` run with the same seed.
    #[arg(long)]
    pub replicate: Option<u64>,
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub network: NetworkFlags,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// FDR target of the decision rule.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Points per score curve; 0 skips the sweeps.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Also score against the thresholded true covariance.
    #[arg(long)]
    pub cov_truth: bool,
    /// Repeat the experiment at each of these theta1 values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta1_values: Vec<f64>,
    /// External method results as `name=path`, scored on replicate 0.
    #[arg(long = "import")]
    pub import: Vec<String>,
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct StatsFlags {
    /// Edge list (first two columns are gene ids).
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Second edge list to compare against.
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Gene universe, one id per line.
    #[arg(long)]
    pub genes: Option<PathBuf>,
    /// Take the gene universe from an expression matrix instead.
    #[arg(long)]
    pub expr: Option<PathBuf>,
    #[arg(long, short)]
    pub out_dir: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    let file = match &cli.global.config {
        Some(p) => settings::load_config(p)?,
        None => Default::default(),
    };
    let global = settings::flag_overrides(&cli.global)?;
    let ctx = commands::Context::new(cli.global.config.clone(), file, global)?;
    match &cli.command {
        Command::Fit(f) => commands::fit(&ctx, f),
        Command::Infer(f) => commands::infer(&ctx, f),
        Command::Simulate(f) => commands::simulate_cmd(&ctx, f),
        Command::Evaluate(f) => commands::evaluate(&ctx, f),
        Command::Stats(f) => commands::stats(&ctx, f),
    }
}

fn emit(line: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            emit(&Failure::invalid(msg.trim_end()).to_json());
            return ExitCode::from(EXIT_INVALID as u8);
        }
    };
    match run(cli) {
        Ok(summary) => {
            emit(&summary);
            ExitCode::SUCCESS
        }
        Err(f) => {
            log::error!("{f}");
            emit(&f.to_json());
            ExitCode::from(f.code as u8)
        }
    }
}

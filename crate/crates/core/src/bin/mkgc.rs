//! Command-line front end for the pipeline stages.
//!
//! Every subcommand takes `--config` (TOML, or JSON for `.json` files),
//! `--seed` and `--out-dir`. Failures print one JSON line
//! `{"error":{"kind":..,"message":..}}` to stderr and exit nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mkgc::harness::{read_config, run_pipeline, run_stage, ExperimentConfig, Stage, StageOptions};
use mkgc::Error;

#[derive(Parser)]
#[command(name = "mkgc", version, about = "Multilingual knowledge graph completion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config; the built-in synthetic benchmark when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Load TSV triples and JSONL labels named by `data` in the config.
    Ingest(Common),
    /// Generate a synthetic multilingual KG.
    Synth(Common),
    /// Partition triples into train/valid/test and the prompt subset.
    Split(Common),
    /// Train TransE on the training split.
    TrainKge(Common),
    /// Retrieve top-m candidates for prompt and test queries.
    GenCandidates(Common),
    /// Render text prompts for training examples and test queries.
    BuildPrompts(Common),
    /// Train the selector with KL-GMoE adapters.
    TrainAdapter(Common),
    /// Iteratively rerank test candidates with the trained selector.
    Rerank(Common),
    /// Score the reranked lists.
    Eval(Common),
    /// Full pipeline against both ablations over a seed sweep.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Expert-selection tables per language and relation.
    RouteAnalyze(Common),
    /// Analytic forward FLOPs of the configured host and adapter.
    Flops {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3.0)]
        tokens: f64,
    },
    /// Every stage from data to routing tables.
    Run(Common),
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::benchmark(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<(), Error> {
    let mut opts = StageOptions::default();
    let (stage, common) = match command {
        Command::Ingest(c) => (Stage::Ingest, c),
        Command::Synth(c) => (Stage::Synth, c),
        Command::Split(c) => (Stage::Split, c),
        Command::TrainKge(c) => (Stage::TrainKge, c),
        Command::GenCandidates(c) => (Stage::GenCandidates, c),
        Command::BuildPrompts(c) => (Stage::BuildPrompts, c),
        Command::TrainAdapter(c) => (Stage::TrainAdapter, c),
        Command::Rerank(c) => (Stage::Rerank, c),
        Command::Eval(c) => (Stage::Eval, c),
        Command::Ablate { common, seeds } => {
            opts.seeds = seeds;
            (Stage::Ablate, common)
        }
        Command::RouteAnalyze(c) => (Stage::RouteAnalyze, c),
        Command::Flops { common, tokens } => {
            opts.tokens = tokens;
            (Stage::Flops, common)
        }
        Command::Run(c) => return run_pipeline(&load(&c)?, &c.out_dir),
    };
    let cfg = load(&common)?;
    log::info!("{} -> {}", stage.name(), common.out_dir.display());
    run_stage(stage, &cfg, &common.out_dir, &opts)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().lines().next().unwrap_or("bad arguments")));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use apiseq::generator::Variant;
use apiseq::pipeline::{self, EvalSource, PipelineError, RunConfig};
use clap::{Parser, Subcommand};

/// Retrieval-augmented API sequence recommendation experiments.
#[derive(Debug, Parser)]
#[command(name = "apiseq", version)]
struct Cli {
    /// Run configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Ablation variant: annotation_only, plus_title or plus_title_api.
    /// Repeat for `evaluate` and `run`.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Vec<Variant>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reject malformed input records instead of skipping them.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Deduplicate, build the API vocabulary, filter and split.
    Prepare,
    /// Mine triplets and train the filtering embedder and re-ranker.
    TrainLinker,
    /// Link every pair to its top post and write the expanded datasets.
    Link,
    /// Train the generator for one variant.
    TrainGenerator,
    /// Decode the test split.
    Predict {
        /// Greedy decoding instead of beam search.
        #[arg(long)]
        greedy: bool,
    },
    /// Score prediction files against the test split.
    Evaluate {
        /// Extra prediction file as NAME=PATH.
        #[arg(long, value_parser = parse_source)]
        predictions: Vec<(String, PathBuf)>,
    },
    /// Match-category distribution of the linked posts.
    AnalyzeMatches,
    /// Print the effective configuration.
    ShowConfig,
    /// Every stage for the selected variants (all three by default).
    Run,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: apiseq::generator::GeneratorError| e.to_string())
}

fn parse_source(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got {s:?}"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected NAME=PATH, got {s:?}"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.strict {
        cfg.strict = true;
    }
    if let [v] = cli.variant.as_slice() {
        cfg.variant = *v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single_variant(cli: &Cli, cfg: &RunConfig) -> Result<Variant, PipelineError> {
    match cli.variant.as_slice() {
        [] => Ok(cfg.variant),
        [v] => Ok(*v),
        _ => Err(PipelineError::Usage("this command takes a single --variant".into())),
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializes"));
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::ShowConfig => print!("{}", cfg.to_toml()),
        Command::Prepare => print_json(&pipeline::cmd_prepare(&cfg)?),
        Command::TrainLinker => print_json(&pipeline::cmd_train_linker(&cfg)?),
        Command::Link => print_json(&pipeline::cmd_link(&cfg)?),
        Command::TrainGenerator => print_json(&pipeline::cmd_train_generator(&cfg, single_variant(cli, &cfg)?)?),
        Command::Predict { greedy } => print_json(&pipeline::cmd_predict(&cfg, single_variant(cli, &cfg)?, *greedy)?),
        Command::Evaluate { predictions } => {
            let mut sources: Vec<EvalSource> = if cli.variant.is_empty() && !predictions.is_empty() {
                Vec::new()
            } else if cli.variant.is_empty() {
                Variant::ALL.iter().map(|&v| EvalSource::variant(&cfg, v)).filter(|s| s.path.exists()).collect()
            } else {
                cli.variant.iter().map(|&v| EvalSource::variant(&cfg, v)).collect()
            };
            sources.extend(predictions.iter().map(|(name, path)| EvalSource { name: name.clone(), path: path.clone() }));
            let report = pipeline::cmd_evaluate(&cfg, &sources)?;
            print!("{}", report.table());
        }
        Command::AnalyzeMatches => print_json(&pipeline::cmd_analyze_matches(&cfg)?),
        Command::Run => {
            let variants = if cli.variant.is_empty() { Variant::ALL.to_vec() } else { cli.variant.clone() };
            print!("{}", pipeline::run_all(&cfg, &variants)?.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

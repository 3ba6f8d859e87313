use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oodkit::cli::{self, RunConfig};
use oodkit::Result;

#[derive(Parser)]
#[command(name = "oodkit", version, about = "Out-of-distribution detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Generate data, train, select T, score all methods and print the report.
    Bench,
    /// Train a model and save it to --out.
    Train,
    /// Fit the Thinkback gradient normalizer and save it to --out.
    FitNormalizer,
    /// Write per-sample scores as `id,partition,method,score`.
    Score,
    /// Compute metrics from a scores file.
    Eval {
        /// Scores CSV; defaults to the `scores` config key.
        scores: Option<PathBuf>,
    },
    /// Print the validation spread per candidate temperature and the argmin.
    SelectTemp,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// text, csv or jsonl.
    #[arg(long, global = true)]
    format: Option<String>,
    /// softmax, energy, thinkback, all, or a comma-separated list.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Fixed Thinkback temperature (skips selection).
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    include_bias: bool,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    normalizer: Option<PathBuf>,
    /// External score table (`id,partition,z0..,h0..`).
    #[arg(long, global = true)]
    external: Option<PathBuf>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn build_config(c: &Common, eval_scores: Option<&PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &c.config {
        cfg.apply_file(p)?;
    }
    for kv in &c.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| oodkit::Error::Config(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    let path = |p: &PathBuf| p.display().to_string();
    let overrides: [(&str, Option<String>); 9] = [
        ("seed", c.seed.map(|v| v.to_string())),
        ("out", c.out.as_ref().map(path)),
        ("format", c.format.clone()),
        ("method", c.method.clone()),
        ("temperature", c.temperature.map(|v| v.to_string())),
        ("epsilon", c.epsilon.map(|v| v.to_string())),
        ("model", c.model.as_ref().map(path)),
        ("normalizer", c.normalizer.as_ref().map(path)),
        ("external", c.external.as_ref().map(path)),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if c.include_bias {
        cfg.include_bias = true;
    }
    if let Some(p) = eval_scores {
        cfg.scores = Some(p.clone());
    }
    Ok(cfg)
}

fn run(args: Cli) -> Result<()> {
    let scores = match &args.command {
        Command::Eval { scores } => scores.as_ref(),
        _ => None,
    };
    let cfg = build_config(&args.common, scores)?;
    match args.command {
        Command::Bench => cli::cmd_bench(&cfg).map(drop),
        Command::Train => cli::cmd_train(&cfg).map(drop),
        Command::FitNormalizer => cli::cmd_fit_normalizer(&cfg).map(drop),
        Command::Score => cli::cmd_score(&cfg).map(drop),
        Command::Eval { .. } => cli::cmd_eval(&cfg).map(drop),
        Command::SelectTemp => cli::cmd_select_temp(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

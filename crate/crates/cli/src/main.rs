//! `kalm`: generate corpora, build contexts, train, evaluate and inspect KALM models.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use kalm::model::{TrainConfig, CONFIG_KEYS};
use kalm::KalmError;

#[derive(Debug, Parser)]
#[command(name = "kalm", version, about = "Knowledge-aware long-document classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and knowledge graph.
    Gen(Common),
    /// Embed the knowledge graph and build every document's contexts.
    Build(Common),
    /// Train a model and save the best-validation checkpoint.
    Train(Common),
    /// Evaluate a saved checkpoint on the test split.
    Eval(Common),
    /// Export fusion-attention and error-grid tables for a checkpoint.
    Explain(Common),
    /// Train the context and fusion ablation variants.
    Ablate(Common),
    /// Retrain on growing fractions of the training split.
    Sweep(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Configuration override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", num_args = 1..)]
    overrides: Vec<String>,
    /// Output (and default input) directory.
    #[arg(long, value_name = "DIR", default_value = "kalm_out")]
    out: PathBuf,
    /// Shorthand for --set seed=N.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Corpus file [default: <out>/corpus.jsonl].
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// Directory holding triples.tsv and descriptions.tsv [default: <out>/kg].
    #[arg(long, value_name = "DIR")]
    kg: Option<PathBuf>,
    /// Precomputed paragraph embeddings in interchange format.
    #[arg(long, value_name = "PATH")]
    embeddings: Option<PathBuf>,
    /// Checkpoint directory [default: <out>/model].
    #[arg(long, value_name = "DIR")]
    model: Option<PathBuf>,
}

fn config_help() -> String {
    let defaults = TrainConfig::default();
    let mut out = String::from("Configuration keys (default):\n");
    for (key, about) in CONFIG_KEYS {
        let value = defaults.get(key).unwrap_or_default();
        out.push_str(&format!("  {key}={value}\n      {about}\n"));
    }
    out.push_str("\nEnvironment:\n  KALM_THREADS  worker thread cap (default 1)\n");
    out
}

fn command() -> clap::Command {
    let help = config_help();
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|c| c.get_name().to_string()).collect();
    for name in names {
        let help = help.clone();
        cmd = cmd.mut_subcommand(name, |c| c.after_help(help));
    }
    cmd
}

/// Machine-readable failure line on stderr.
fn report(kind: &str, code: u8, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "code": code, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<KalmError>(),
            Some(KalmError::Config(_) | KalmError::MissingPath(_))
        )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) if e.use_stderr() => {
            return report("usage", 2, e.to_string().lines().next().unwrap_or("bad arguments"));
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => return report("usage", 2, &e.to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}");
            if is_config_error(&e) {
                report("config", 2, &message)
            } else {
                report("runtime", 1, &message)
            }
        }
    }
}

fn threads() -> anyhow::Result<usize> {
    match std::env::var("KALM_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(KalmError::Config(format!("KALM_THREADS={v:?} is not a positive integer")).into()),
        },
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = threads()?;
    log::debug!("thread cap {threads}; every stage runs on one thread");
    let (name, common) = match &cli.command {
        Command::Gen(c) => ("gen", c),
        Command::Build(c) => ("build", c),
        Command::Train(c) => ("train", c),
        Command::Eval(c) => ("eval", c),
        Command::Explain(c) => ("explain", c),
        Command::Ablate(c) => ("ablate", c),
        Command::Sweep(c) => ("sweep", c),
    };
    let ctx = inputs::Context::new(common)?;
    match cli.command {
        Command::Gen(_) => commands::gen(&ctx),
        Command::Build(_) => commands::build(&ctx),
        Command::Train(_) => commands::train(&ctx),
        Command::Eval(_) => commands::eval(&ctx),
        Command::Explain(_) => commands::explain(&ctx),
        Command::Ablate(_) => commands::ablate(&ctx),
        Command::Sweep(_) => commands::sweep(&ctx),
    }
    .with_context(|| format!("{name} failed"))
}

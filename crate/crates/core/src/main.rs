use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cvt::cli::{self, RunConfig, Stage, OUTPUT_DIR_ENV};

#[derive(Parser)]
#[command(
    name = "cvt",
    version,
    about = "Path-level importance for small neural classifiers"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`key = value` lines). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config file and the environment.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a single config key, e.g. `--set bins=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train the network and save the model.
    Train,
    /// Capture activations, fit marginals and correlate adjacent layers.
    Analyze,
    /// Score and rank every input-to-output path.
    Rank,
    /// Fit a random forest and compare feature importances.
    CompareRf,
    /// Draw the network with edges weighted by importance.
    Render,
    /// Run every stage in order.
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Train => Stage::Train,
            Command::Analyze => Stage::Analyze,
            Command::Rank => Stage::Rank,
            Command::CompareRf => Stage::CompareRf,
            Command::Render => Stage::Render,
            Command::All => Stage::All,
        }
    }
}

fn config(args: &Args) -> cvt::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.output_dir = PathBuf::from(dir);
        }
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| cvt::Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = config(&args).and_then(|cfg| cli::run(args.command.into(), &cfg));
    match result {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("cvt: warning {w}");
            }
            for a in &outcome.artifacts {
                println!("{}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", cli::error_line(&e));
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

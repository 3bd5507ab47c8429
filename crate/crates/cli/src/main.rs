use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use lingo_core::config::ExperimentConfig;

mod chat;
mod eval;
mod inspect;
mod plot;
mod train;

/// Grounded language learning with a scripted teacher.
#[derive(Parser, Debug)]
#[command(name = "lingo", version)]
struct Cli {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment seed (for `eval`, the test-session seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Checkpoint to resume from or to evaluate.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Overrides one config key, e.g. `--set train.lr=0.01`. Applied after
    /// `LINGO_*` environment variables.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Prints the fully resolved config as TOML and exits.
    #[arg(long, global = true)]
    print_effective_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trains the configured agent, writing metrics and checkpoints.
    Train(train::TrainArgs),
    /// Reports test accuracy of a checkpoint (or of the scripted oracle).
    Eval(eval::EvalArgs),
    /// Plays the teacher yourself.
    Chat(chat::ChatArgs),
    /// Dumps attention maps for a scripted dialogue.
    InspectAttention(inspect::InspectArgs),
    /// Renders reward curves and accuracy bar charts as SVG.
    Plot(plot::PlotArgs),
}

/// Global options after config resolution.
pub struct Ctx {
    pub config: ExperimentConfig,
    /// True when the user supplied a config file or overrides.
    pub config_given: bool,
    pub seed: Option<u64>,
    pub checkpoint: Option<PathBuf>,
}

fn resolve_config(cli: &Cli) -> lingo_core::Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides = ExperimentConfig::env_overrides(std::env::vars());
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| lingo_core::Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut cfg = base.with_overrides(overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    if cli.print_effective_config {
        print!("{}", config.to_toml_string());
        return Ok(());
    }
    let ctx = Ctx {
        config,
        config_given: cli.config.is_some() || !cli.overrides.is_empty() || cli.seed.is_some(),
        seed: cli.seed,
        checkpoint: cli.checkpoint,
    };
    match cli.command {
        Some(Command::Train(a)) => train::run(&ctx, &a),
        Some(Command::Eval(a)) => eval::run(&ctx, &a),
        Some(Command::Chat(a)) => chat::run(&ctx, &a),
        Some(Command::InspectAttention(a)) => inspect::run(&ctx, &a),
        Some(Command::Plot(a)) => plot::run(&a),
        None => Err(lingo_core::Error::Config("no command given; see --help".into()).into()),
    }
}

/// 2 for usage and configuration problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<lingo_core::Error>(),
            Some(lingo_core::Error::Config(_) | lingo_core::Error::UnknownToken { .. })
        )
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

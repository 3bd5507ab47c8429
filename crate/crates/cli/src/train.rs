use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use lingo_core::checkpoint;
use lingo_core::config::ExperimentConfig;
use lingo_core::evaluation::make_baseline_agent;
use lingo_core::training::{MetricsRecord, Trainer};
use lingo_core::Error;

use crate::Ctx;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Sessions to train in total, overriding `train.max_train_sessions`.
    #[arg(long)]
    pub sessions: Option<u64>,
}

pub const LATEST: &str = "latest.ckpt";

/// Refuses a checkpoint whose tensors would not fit the requested model.
pub fn check_compatible(requested: &ExperimentConfig, stored: &ExperimentConfig) -> lingo_core::Result<()> {
    if requested.model != stored.model {
        return Err(Error::Config(format!(
            "checkpoint model {:?} does not match the configured model {:?}",
            stored.model, requested.model
        )));
    }
    if requested.env.objects != stored.env.objects {
        return Err(Error::Config(format!(
            "checkpoint objects {:?} do not match the configured objects {:?}",
            stored.env.objects, requested.env.objects
        )));
    }
    Ok(())
}

/// Loads a checkpoint, checking it against any explicitly given config.
pub fn load_checkpoint(ctx: &Ctx, path: &Path) -> Result<(Trainer, ExperimentConfig)> {
    let (trainer, stored) = checkpoint::load(path)?;
    if ctx.config_given {
        check_compatible(&ctx.config, &stored).with_context(|| format!("resuming from {}", path.display()))?;
    }
    Ok((trainer, stored))
}

/// Keeps only records up to `step`, so a resumed run continues the log
/// exactly where its checkpoint left off.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: MetricsRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })
            .with_context(|| format!("reading {}", path.display()))?;
        if r.step <= step {
            kept.push(line);
        }
    }
    let mut out = String::new();
    for l in kept {
        out.push_str(&l);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn run(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let (mut trainer, mut config) = match &ctx.checkpoint {
        Some(p) => {
            let (t, stored) = load_checkpoint(ctx, p)?;
            let mut cfg = stored;
            if ctx.config_given {
                cfg.paths = ctx.config.paths.clone();
                cfg.train.max_train_sessions = ctx.config.train.max_train_sessions;
            }
            (t, cfg)
        }
        None => {
            let cfg = ctx.config.clone();
            (make_baseline_agent(cfg.train.kind, &cfg)?, cfg)
        }
    };
    if let Some(n) = args.sessions {
        config.train.max_train_sessions = n;
    }
    let total = config.train.max_train_sessions;
    let log_path = config.paths.metrics_log.clone();
    let ckpt_path: PathBuf = config.paths.checkpoint_dir.join(LATEST);

    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    if ctx.checkpoint.is_some() {
        truncate_log(&log_path, trainer.sessions())?;
    } else {
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    }
    let mut log = BufWriter::new(OpenOptions::new().append(true).open(&log_path)?);

    let every = config.paths.checkpoint_every;
    eprintln!(
        "training {} from session {} to {total}; metrics -> {}",
        config.train.kind.name(),
        trainer.sessions(),
        log_path.display()
    );
    let mut recent = Vec::new();
    while trainer.sessions() < total {
        let chunk = if every == 0 { total - trainer.sessions() } else { (every - trainer.sessions() % every).min(total - trainer.sessions()) };
        trainer.run(chunk, |r| {
            recent.push(r.mean_reward);
            r.write_line(&mut log)
        })?;
        log.flush()?;
        checkpoint::save(&trainer, &config, &ckpt_path)?;
        let tail = &recent[recent.len().saturating_sub(100)..];
        let mean = if tail.is_empty() { 0.0 } else { tail.iter().sum::<f64>() / tail.len() as f64 };
        eprintln!("session {:>7}  reward(last 100) {mean:+.3}  checkpoint {}", trainer.sessions(), ckpt_path.display());
    }
    if total == trainer.sessions() && !ckpt_path.exists() {
        checkpoint::save(&trainer, &config, &ckpt_path)?;
    }
    println!("{}", ckpt_path.display());
    Ok(())
}

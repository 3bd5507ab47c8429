use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use lingo_core::evaluation::{evaluate_agents, evaluate_oracle, test_teacher, Configuration, EvalReport, Snapshot};
use lingo_core::session::LearnerAgent;
use lingo_core::teacher::{FocusPolicy, Teacher};
use lingo_core::vocab::Vocabulary;
use lingo_core::Error;

use crate::train::load_checkpoint;
use crate::Ctx;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// `mixed` or `held_out`.
    #[arg(long, default_value = "mixed")]
    pub configuration: String,
    /// Test sessions, overriding `eval.n_sessions`.
    #[arg(long)]
    pub n_sessions: Option<usize>,
    /// Evaluates the scripted oracle instead of a checkpoint.
    #[arg(long)]
    pub oracle: bool,
    /// Writes the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Writes every test interaction as JSON lines.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
}

fn print_summary(r: &EvalReport) {
    println!(
        "accuracy {:.4} ({} of {} judged responses, {} sessions, {} / {})",
        r.accuracy,
        r.correct,
        r.judged,
        r.n_sessions,
        r.setting.name(),
        r.configuration.name()
    );
    for (form, s) in &r.per_form_accuracy {
        println!("  {:<18} {:.4} ({} of {})", form.name(), s.accuracy, s.correct, s.judged);
    }
}

pub fn run(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let configuration = Configuration::parse(&args.configuration)?;
    let n = args.n_sessions.unwrap_or(ctx.config.eval.n_sessions);
    let seed = ctx.seed.unwrap_or(ctx.config.eval.seed);
    let max_steps = ctx.config.env.max_steps;
    let (report, sessions) = if args.oracle {
        let cfg = &ctx.config;
        let lexicon = cfg.lexicon()?;
        let vocab = Vocabulary::grounded(lexicon.names())?;
        let policy = match configuration {
            Configuration::Mixed => FocusPolicy::Mixed,
            Configuration::HeldOut => FocusPolicy::HeldOut,
        };
        let teacher = Teacher::new(vocab, lexicon, cfg.activity_config()?, policy)?;
        if args.transcripts.is_some() {
            let oracle = teacher.clone();
            evaluate_agents(&teacher, configuration, n, max_steps, seed, || {
                Box::new(lingo_core::session::OracleAgent::new(oracle.clone()))
            })?
        } else {
            (evaluate_oracle(&teacher, configuration, n, max_steps, seed)?, Vec::new())
        }
    } else {
        let path = ctx
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("eval needs --checkpoint (or --oracle)".into()))?;
        let (trainer, stored) = load_checkpoint(ctx, path)?;
        let snapshot = Snapshot::of(&trainer);
        let teacher = test_teacher(trainer.learner(), &stored.lexicon()?, &stored.activity_config()?, configuration)?;
        evaluate_agents(&teacher, configuration, n, max_steps, seed, || {
            Box::new(LearnerAgent::new(snapshot.learner, snapshot.store, snapshot.bypass_controller))
        })?
    };
    print_summary(&report);
    if let Some(p) = &args.report {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.transcripts {
        let mut out = std::io::BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
        for s in &sessions {
            s.write_jsonl(&mut out)?;
        }
    }
    Ok(())
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use lingo_core::evaluation::argmax;
use lingo_core::session::{Agent, LearnerAgent};
use lingo_core::teacher::{Feedback, FocusPolicy, Teacher};
use lingo_core::vocab::{Utterance, Vocabulary};
use lingo_core::world::{render_scene, Direction, Lexicon, WorldState, GRID};
use lingo_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chat::parse_world;
use crate::train::load_checkpoint;
use crate::Ctx;

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Scripted dialogue: `world DIRECTION=OBJECT ...` lines start a session,
    /// every other non-comment line is a teacher utterance.
    #[arg(long)]
    pub dialogue: PathBuf,
    /// JSON-lines output; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// One scripted session.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedSession {
    pub world: WorldState,
    pub utterances: Vec<Utterance>,
}

/// Parses a dialogue file; errors carry 1-based line numbers.
pub fn parse_dialogue(text: &str, lexicon: &Lexicon, vocab: &Vocabulary) -> lingo_core::Result<Vec<ScriptedSession>> {
    let mut sessions: Vec<ScriptedSession> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |message: String| Error::Parse { line: i + 1, message };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(desc) = line.strip_prefix("world ") {
            let world = parse_world(lexicon, desc).map_err(|e| err(e.to_string()))?;
            sessions.push(ScriptedSession { world, utterances: Vec::new() });
            continue;
        }
        let session = sessions.last_mut().ok_or_else(|| err("teacher utterance before any `world` line".into()))?;
        session.utterances.push(Utterance::parse(vocab, line).map_err(|e| err(e.to_string()))?);
    }
    Ok(sessions)
}

#[derive(Debug, Serialize)]
pub struct AttentionRecord {
    pub session: usize,
    pub turn: usize,
    pub world: String,
    pub teacher: String,
    pub learner: String,
    /// Row-major 3×3 map, north on the first row.
    pub attention: Vec<Vec<f64>>,
    pub argmax_cell: String,
    pub gate: Vec<f64>,
}

fn cell_name(index: usize) -> String {
    Direction::ALL
        .into_iter()
        .find(|d| d.cell_index() == index)
        .map(|d| d.word().to_string())
        .unwrap_or_else(|| if index == GRID * GRID / 2 { "center".into() } else { format!("corner {index}") })
}

fn write_records(path: Option<&Path>, records: &[AttentionRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn run(ctx: &Ctx, args: &InspectArgs) -> Result<()> {
    let path = ctx.checkpoint.as_ref().ok_or_else(|| Error::Config("inspect-attention needs --checkpoint".into()))?;
    let (trainer, stored) = load_checkpoint(ctx, path)?;
    let lexicon = stored.lexicon()?;
    let vocab = trainer.learner().vocab();
    let text = fs::read_to_string(&args.dialogue).with_context(|| format!("reading {}", args.dialogue.display()))?;
    let sessions = parse_dialogue(&text, &lexicon, vocab).with_context(|| args.dialogue.display().to_string())?;
    let teacher = Teacher::new(vocab.clone(), lexicon.clone(), stored.activity_config()?, FocusPolicy::Mixed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed.unwrap_or(stored.seed));
    let mut records = Vec::new();
    for (si, s) in sessions.iter().enumerate() {
        let mut agent = LearnerAgent::new(trainer.learner(), trainer.store(), trainer.bypass_controller());
        agent.reset(&s.world, &render_scene(&s.world, lexicon.len()))?;
        for (ti, u) in s.utterances.iter().enumerate() {
            let (response, attention, gate) = agent.respond_with_attention(u)?;
            let feedback = match teacher.interpret(&s.world, u) {
                Some(p) => teacher.feedback(&s.world, &p, &response, &mut rng)?,
                None => Feedback { sentence: Utterance::silent(vocab), reward: 0.0 },
            };
            agent.observe(&feedback)?;
            records.push(AttentionRecord {
                session: si,
                turn: ti,
                world: s.world.describe(&lexicon),
                teacher: u.surface().to_string(),
                learner: response.surface().to_string(),
                argmax_cell: argmax(&attention).map(cell_name).unwrap_or_default(),
                attention: attention.chunks(GRID).map(<[f64]>::to_vec).collect(),
                gate,
            });
        }
    }
    write_records(args.output.as_deref(), &records)
}

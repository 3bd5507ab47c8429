use std::fs;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use lingo_core::config::ExperimentConfig;
use lingo_core::session::{Agent, Interaction, LearnerAgent};
use lingo_core::teacher::{Feedback, FocusPolicy, InteractionForm, Teacher};
use lingo_core::vocab::Utterance;
use lingo_core::world::{render_scene, sample_world, Direction, Lexicon, WorldState};
use lingo_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::train::load_checkpoint;
use crate::Ctx;

#[derive(Args, Debug)]
pub struct ChatArgs {
    /// Fixed world, e.g. `north=apple,south=banana,east=cherry,west=orange`.
    #[arg(long)]
    pub world: Option<String>,
    /// Where the transcript is written on exit.
    #[arg(long, default_value = "chat_transcript.jsonl")]
    pub transcript: PathBuf,
}

const HELP: &str = "type a teacher utterance (e.g. `what is on the east`, `where is apple`, `.`);\n\
commands: :world shows the scene, :new draws a new world, :vocab lists the words, :quit exits";

/// Parses `north=apple,south=banana,...`.
pub fn parse_world(lexicon: &Lexicon, desc: &str) -> lingo_core::Result<WorldState> {
    let mut pairs = Vec::new();
    for part in desc.split([',', ' ']).filter(|p| !p.is_empty()) {
        let (d, o) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("world entry {part:?} is not DIRECTION=OBJECT")))?;
        let d = Direction::ALL
            .into_iter()
            .find(|x| x.word() == d)
            .ok_or_else(|| Error::Config(format!("unknown direction {d:?}")))?;
        pairs.push((d, o));
    }
    WorldState::from_names(lexicon, &pairs)
}

/// The scene as a 3×3 text grid with the learner (`@`) in the middle.
pub fn render_grid(world: &WorldState, lexicon: &Lexicon) -> String {
    let name = |d| lexicon.name(world.object_at(d));
    let w = world.placements().map(|(o, _)| lexicon.name(o).len()).max().unwrap_or(1);
    let (n, s, e, west) = (name(Direction::North), name(Direction::South), name(Direction::East), name(Direction::West));
    format!("{:w$}  {n:^w$}\n{west:>w$}  {:^w$}  {e}\n{:w$}  {s:^w$}\n", "", "@", "")
}

fn parse_reward(line: &str) -> Option<f64> {
    match line.trim() {
        "+1" | "1" => Some(1.0),
        "-1" => Some(-1.0),
        _ => None,
    }
}

struct Chat<'a, R: BufRead, W: Write> {
    input: R,
    out: W,
    teacher: Teacher,
    agent: LearnerAgent<'a>,
    world: WorldState,
    rng: ChaCha8Rng,
    transcript: Vec<Interaction>,
}

impl<R: BufRead, W: Write> Chat<'_, R, W> {
    fn read_line(&mut self) -> Result<Option<String>> {
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        Ok(Some(line.trim().to_string()))
    }

    fn new_world(&mut self, world: WorldState) -> Result<()> {
        let scene = render_scene(&world, self.teacher.lexicon().len());
        self.agent.reset(&world, &scene)?;
        self.world = world;
        self.show_world()
    }

    fn show_world(&mut self) -> Result<()> {
        let grid = render_grid(&self.world, self.teacher.lexicon());
        write!(self.out, "{grid}")?;
        Ok(())
    }

    fn turn(&mut self, text: &str) -> Result<()> {
        let utterance = match Utterance::parse(self.teacher.vocab(), text) {
            Ok(u) => u,
            Err(e @ Error::UnknownToken { .. }) => {
                writeln!(self.out, "{e}")?;
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        let (response, _, _) = self.agent.respond_with_attention(&utterance)?;
        writeln!(self.out, "learner: {}", response.surface())?;
        let (feedback, form) = match self.teacher.interpret(&self.world, &utterance) {
            Some(prompt) => (self.teacher.feedback(&self.world, &prompt, &response, &mut self.rng)?, prompt.form),
            None => {
                write!(self.out, "reward for this response (+1 / -1, empty to skip)? ")?;
                self.out.flush()?;
                let reward = self.read_line()?.as_deref().and_then(parse_reward).unwrap_or(0.0);
                let sentence = Utterance::silent(self.teacher.vocab());
                (Feedback { sentence, reward }, InteractionForm::LearnerStatement)
            }
        };
        self.agent.observe(&feedback)?;
        writeln!(self.out, "teacher: {}  (reward {:+})", feedback.sentence.surface(), feedback.reward)?;
        self.transcript.push(Interaction {
            step: self.transcript.len(),
            form,
            teacher: utterance.surface().to_string(),
            learner: response.surface().to_string(),
            feedback: feedback.sentence.surface().to_string(),
            reward: feedback.reward,
        });
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        writeln!(self.out, "{HELP}")?;
        self.show_world()?;
        loop {
            write!(self.out, "> ")?;
            self.out.flush()?;
            let Some(line) = self.read_line()? else { break };
            match line.as_str() {
                "" => writeln!(self.out, "{HELP}")?,
                ":quit" | ":q" => break,
                ":world" => self.show_world()?,
                ":vocab" => writeln!(self.out, "{}", self.teacher.vocab().tokens().join(" "))?,
                ":new" => {
                    let w = sample_world(&self.teacher.lexicon().ids(), &mut self.rng)?;
                    self.new_world(w)?;
                }
                text => self.turn(text)?,
            }
        }
        Ok(())
    }
}

pub fn run(ctx: &Ctx, args: &ChatArgs) -> Result<()> {
    let path = ctx.checkpoint.as_ref().ok_or_else(|| Error::Config("chat needs --checkpoint".into()))?;
    let (trainer, stored): (_, ExperimentConfig) = load_checkpoint(ctx, path)?;
    let lexicon = stored.lexicon()?;
    let teacher = Teacher::new(trainer.learner().vocab().clone(), lexicon.clone(), stored.activity_config()?, FocusPolicy::Mixed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed.unwrap_or(stored.seed));
    let world = match &args.world {
        Some(s) => parse_world(&lexicon, s)?,
        None => sample_world(&lexicon.ids(), &mut rng)?,
    };
    let mut agent = LearnerAgent::new(trainer.learner(), trainer.store(), trainer.bypass_controller());
    agent.reset(&world, &render_scene(&world, lexicon.len()))?;
    let stdin = io::stdin();
    let mut chat = Chat { input: stdin.lock(), out: io::stdout(), teacher, agent, world, rng, transcript: Vec::new() };
    let result = chat.run();
    let mut text = String::new();
    for i in &chat.transcript {
        text.push_str(&serde_json::to_string(i)?);
        text.push('\n');
    }
    fs::write(&args.transcript, text).with_context(|| format!("writing {}", args.transcript.display()))?;
    result
}

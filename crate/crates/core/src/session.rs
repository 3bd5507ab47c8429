//! Multi-step teacher/learner sessions.

use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::learner::{AgentState, Learner};
use crate::teacher::{Feedback, InteractionForm, Prompt, Teacher};
use crate::vocab::{TokenId, Utterance, Vocabulary};
use crate::world::{render_scene, Direction, Scene, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Sampled control.
    Train,
    /// Mean control.
    Eval,
}

/// Anything that can play the learner's side of a session.
pub trait Agent {
    fn vocab(&self) -> &Vocabulary;
    /// Starts a new session in `world`; clears all dialogue state.
    fn reset(&mut self, world: &WorldState, scene: &Scene) -> Result<()>;
    /// Responds to the teacher. Only `prompt.utterance` is meant to be read
    /// by learning agents; scripted agents may use the focus.
    fn respond(&mut self, prompt: &Prompt, mode: Mode, rng: &mut dyn RngCore) -> Result<Utterance>;
    fn observe(&mut self, feedback: &Feedback) -> Result<()>;
}

/// One teacher/learner/feedback exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub step: usize,
    pub form: InteractionForm,
    pub teacher: String,
    pub learner: String,
    pub feedback: String,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub world: WorldState,
    pub step_index: usize,
    pub max_steps: usize,
    pub transcript: Vec<Interaction>,
}

impl Session {
    pub fn mean_reward(&self) -> f64 {
        if self.transcript.is_empty() {
            return 0.0;
        }
        self.transcript.iter().map(|i| i.reward).sum::<f64>() / self.transcript.len() as f64
    }

    /// One JSON object per interaction.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for i in &self.transcript {
            serde_json::to_writer(&mut out, i)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Plays `max_steps` exchanges between `teacher` and `agent` in `world`.
pub fn run_session<R: Rng>(
    world: &WorldState,
    teacher: &Teacher,
    agent: &mut dyn Agent,
    mode: Mode,
    max_steps: usize,
    rng: &mut R,
) -> Result<Session> {
    if agent.vocab().tokens() != teacher.vocab().tokens() {
        return Err(Error::Contract("agent and teacher use different vocabularies".into()));
    }
    let scene = render_scene(world, teacher.lexicon().len());
    agent.reset(world, &scene)?;
    let mut transcript = Vec::with_capacity(max_steps);
    for step in 0..max_steps {
        let prompt = teacher.generate_teacher_utterance(world, step, rng)?;
        let response = agent.respond(&prompt, mode, rng)?;
        let feedback = teacher.feedback(world, &prompt, &response, rng)?;
        agent.observe(&feedback)?;
        transcript.push(Interaction {
            step,
            form: prompt.form,
            teacher: prompt.utterance.surface().to_string(),
            learner: response.surface().to_string(),
            feedback: feedback.sentence.surface().to_string(),
            reward: feedback.reward,
        });
    }
    Ok(Session { world: world.clone(), step_index: max_steps, max_steps, transcript })
}

/// Everything needed to replay one learner turn under new parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnRecord {
    pub step_index: usize,
    /// `h_last` before the teacher's utterance was encoded.
    pub prior_h: Vec<f64>,
    /// Teacher utterance tokens, ending in `<eos>`.
    pub teacher: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub k: Vec<f64>,
    /// Standardised exploration noise `(k - c) / std`; zero without exploration.
    pub noise: Vec<f64>,
    /// Feedback sentence tokens, ending in `<eos>`.
    pub feedback: Vec<TokenId>,
    pub reward: f64,
}

/// The neural learner as a session participant.
pub struct LearnerAgent<'a> {
    learner: &'a Learner,
    store: &'a ParamStore,
    bypass_controller: bool,
    scene: Option<Scene>,
    state: AgentState,
    /// State after encoding the current teacher utterance.
    encoded: Option<AgentState>,
    pending: Option<TurnRecord>,
    records: Vec<TurnRecord>,
}

impl<'a> LearnerAgent<'a> {
    pub fn new(learner: &'a Learner, store: &'a ParamStore, bypass_controller: bool) -> Self {
        Self {
            learner,
            store,
            bypass_controller,
            scene: None,
            state: AgentState::zeros(learner.hidden()),
            encoded: None,
            pending: None,
            records: Vec::new(),
        }
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    /// Completed turns since the last call.
    pub fn take_records(&mut self) -> Vec<TurnRecord> {
        std::mem::take(&mut self.records)
    }

    fn scene(&self) -> Result<&Scene> {
        self.scene.as_ref().ok_or_else(|| Error::Contract("agent used before reset".into()))
    }

    fn turn(&mut self, utterance: &Utterance, explore: bool, rng: &mut dyn RngCore) -> Result<(Utterance, Vec<f64>)> {
        let scene = self.scene()?;
        let encoded = self.learner.encode(self.store, utterance, &self.state, scene)?;
        let r = self.learner.respond(self.store, &encoded, scene, explore, self.bypass_controller, rng)?;
        self.pending = Some(TurnRecord {
            step_index: self.records.len(),
            prior_h: self.state.h_last.clone(),
            teacher: utterance.tokens().to_vec(),
            response: r.utterance.tokens().to_vec(),
            k: r.control.k.clone(),
            noise: r.control.noise(),
            feedback: Vec::new(),
            reward: 0.0,
        });
        self.encoded = Some(encoded);
        Ok((r.utterance, r.control.k))
    }

    /// Encodes a teacher sentence and answers it with mean control; also
    /// returns the attention map and gate the decoder used.
    pub fn respond_with_attention(&mut self, utterance: &Utterance) -> Result<(Utterance, Vec<f64>, Vec<f64>)> {
        // Mean control draws no randomness.
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (u, k) = self.turn(utterance, false, &mut unused)?;
        let (attention, gate) = self.learner.attention_for(self.store, self.scene()?, &k)?;
        Ok((u, attention, gate))
    }
}

impl Agent for LearnerAgent<'_> {
    fn vocab(&self) -> &Vocabulary {
        self.learner.vocab()
    }

    fn reset(&mut self, _world: &WorldState, scene: &Scene) -> Result<()> {
        self.scene = Some(scene.clone());
        self.state = AgentState::zeros(self.learner.hidden());
        self.encoded = None;
        self.pending = None;
        self.records.clear();
        Ok(())
    }

    fn respond(&mut self, prompt: &Prompt, mode: Mode, rng: &mut dyn RngCore) -> Result<Utterance> {
        Ok(self.turn(&prompt.utterance, mode == Mode::Train, rng)?.0)
    }

    /// The feedback sentence is read from the post-utterance state; the
    /// result becomes `h_last` for the next turn.
    fn observe(&mut self, feedback: &Feedback) -> Result<()> {
        let encoded = self.encoded.take().ok_or_else(|| Error::Contract("feedback before any response".into()))?;
        self.state = self.learner.encode(self.store, &feedback.sentence, &encoded, self.scene()?)?;
        if let Some(mut rec) = self.pending.take() {
            rec.feedback = feedback.sentence.tokens().to_vec();
            rec.reward = feedback.reward;
            self.records.push(rec);
        }
        Ok(())
    }
}

/// Scripted agent that always gives a correct answer.
pub struct OracleAgent {
    teacher: Teacher,
    world: Option<WorldState>,
}

impl OracleAgent {
    pub fn new(teacher: Teacher) -> Self {
        Self { teacher, world: None }
    }
}

impl Agent for OracleAgent {
    fn vocab(&self) -> &Vocabulary {
        self.teacher.vocab()
    }

    fn reset(&mut self, world: &WorldState, _scene: &Scene) -> Result<()> {
        self.world = Some(world.clone());
        Ok(())
    }

    fn respond(&mut self, prompt: &Prompt, _mode: Mode, _rng: &mut dyn RngCore) -> Result<Utterance> {
        let world = self.world.as_ref().ok_or_else(|| Error::Contract("agent used before reset".into()))?;
        let focus = prompt.focus.unwrap_or((world.object_at(Direction::North), Direction::North));
        Ok(self.teacher.expected_answer_set(world, focus)?.swap_remove(0))
    }

    fn observe(&mut self, _feedback: &Feedback) -> Result<()> {
        Ok(())
    }
}

/// Scripted agent that always says ".".
pub struct SilentAgent {
    vocab: Vocabulary,
}

impl SilentAgent {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl Agent for SilentAgent {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn reset(&mut self, _world: &WorldState, _scene: &Scene) -> Result<()> {
        Ok(())
    }

    fn respond(&mut self, _prompt: &Prompt, _mode: Mode, _rng: &mut dyn RngCore) -> Result<Utterance> {
        Ok(Utterance::silent(&self.vocab))
    }

    fn observe(&mut self, _feedback: &Feedback) -> Result<()> {
        Ok(())
    }
}

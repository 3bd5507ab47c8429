//! Joint imitation + reinforcement training.

mod losses;
mod replay;
mod value;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{imitation_loss, joint_loss, reinforce_loss, value_loss, Discounts, LossBreakdown, LossWeights};
pub use replay::{replay_push_sample, transitions_from_session, ReplayBuffer, Transition};
pub use value::{td_error, ValueInput, ValueNet};

use crate::autodiff::{Adagrad, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::learner::{Learner, ModelConfig, ParamGroup};
use crate::session::{run_session, LearnerAgent, Mode, Session};
use crate::teacher::{ActivityConfig, FocusPolicy, Teacher};
use crate::vocab::Vocabulary;
use crate::world::{sample_world, Lexicon};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Which losses train the agent and whether the controller is used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[default]
    Joint,
    /// Imitation loss only; responses decoded straight from `h_last`.
    ImitationOnly,
    /// Policy-gradient and value losses only.
    ReinforceOnly,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Joint, BaselineKind::ImitationOnly, BaselineKind::ReinforceOnly];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Joint => "joint",
            BaselineKind::ImitationOnly => "imitation_only",
            BaselineKind::ReinforceOnly => "reinforce_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown agent kind {s:?} (expected joint, imitation_only or reinforce_only)")))
    }

    pub fn weights(self) -> LossWeights {
        match self {
            BaselineKind::Joint => LossWeights::JOINT,
            BaselineKind::ImitationOnly => LossWeights { imitation: 1.0, reinforce: 0.0, value: 0.0 },
            BaselineKind::ReinforceOnly => LossWeights { imitation: 0.0, reinforce: 1.0, value: 1.0 },
        }
    }

    pub fn bypass_controller(self) -> bool {
        self == BaselineKind::ImitationOnly
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: BaselineKind,
    pub lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub target_sync_period: u64,
    pub replay_capacity: usize,
    pub max_train_sessions: u64,
    pub value_width: usize,
    pub value_input: ValueInput,
    /// Multiplier on `lr` for the controller parameters.
    pub controller_lr_scale: f64,
    /// Overrides the weights implied by `kind`.
    pub loss_weights: Option<LossWeights>,
    pub replay_control: ReplayControl,
}

/// Which control a replayed transition is scored at in the policy gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayControl {
    /// The stored noise re-applied to the current control:
    /// `k = c + std ⊙ ε` with `c` and `std` recomputed.
    #[default]
    Noise,
    /// The stored absolute control `k`.
    Stored,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: BaselineKind::Joint,
            lr: 0.05,
            batch_size: 16,
            gamma: 0.99,
            lambda: 0.99,
            target_sync_period: 2000,
            replay_capacity: 10_000,
            max_train_sessions: 6000,
            value_width: 64,
            value_input: ValueInput::StateAndScene,
            controller_lr_scale: 0.01,
            loss_weights: None,
            replay_control: ReplayControl::Noise,
        }
    }
}

impl TrainConfig {
    /// The default config with the slow reference learning rate of 1e-5.
    pub fn reference() -> Self {
        Self { lr: 1e-5, ..Self::default() }
    }

    pub fn weights(&self) -> LossWeights {
        self.loss_weights.unwrap_or_else(|| self.kind.weights())
    }

    pub fn discounts(&self) -> Discounts {
        Discounts { gamma: self.gamma, lambda: self.lambda, replay_control: self.replay_control }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("train.{field}: {why}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(name, format!("{v} must lie in [0, 1]"));
            }
        }
        if self.target_sync_period == 0 {
            return bad("target_sync_period", "must be at least 1".into());
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity", "must be at least 1".into());
        }
        if !(self.controller_lr_scale >= 0.0 && self.controller_lr_scale.is_finite()) {
            return bad("controller_lr_scale", format!("{} must be finite and nonnegative", self.controller_lr_scale));
        }
        if self.value_width == 0 {
            return bad("value_width", "must be at least 1".into());
        }
        let w = self.weights();
        if [w.imitation, w.reinforce, w.value].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("loss_weights", "must be finite and nonnegative".into());
        }
        if w.imitation == 0.0 && w.reinforce == 0.0 && w.value == 0.0 {
            return bad("loss_weights", "at least one weight must be positive".into());
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub imitation: f64,
    pub reinforce: f64,
    pub value: f64,
    pub mean_reward: f64,
}

impl MetricsRecord {
    pub fn write_line<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// Result of one training session.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub session: Session,
    /// `None` while the replay buffer is still too small for a batch.
    pub losses: Option<LossBreakdown>,
    pub record: Option<MetricsRecord>,
}

/// Owns the learner, optimiser, value networks, replay and generators.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) max_steps: usize,
    pub(crate) learner: Learner,
    pub(crate) store: ParamStore,
    pub(crate) value: ValueNet,
    pub(crate) optimizer: Adagrad,
    pub(crate) replay: ReplayBuffer,
    pub(crate) teacher: Teacher,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) sessions: u64,
    pub(crate) updates: u64,
}

/// Seeds for the independent generators derived from one experiment seed.
pub(crate) fn derived_seeds(seed: u64) -> (u64, u64, u64) {
    (seed, seed ^ 0x9e37_79b9_7f4a_7c15, seed.wrapping_add(0x2545_f491_4f6c_dd1d))
}

impl Trainer {
    pub fn new(
        model: ModelConfig,
        config: TrainConfig,
        lexicon: Lexicon,
        activity: ActivityConfig,
        max_steps: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if max_steps == 0 {
            return Err(Error::Config("env.max_steps must be at least 1".into()));
        }
        let vocab = Vocabulary::grounded(lexicon.names())?;
        let teacher = Teacher::new(vocab.clone(), lexicon.clone(), activity, FocusPolicy::Training)?;
        let (init_seed, session_seed, replay_seed) = derived_seeds(seed);
        let mut init_rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut store = ParamStore::new();
        let learner = Learner::new(model.clone(), vocab, lexicon.len(), &mut store, &mut init_rng)?;
        let value = ValueNet::new(
            &mut store,
            config.value_input,
            model.hidden,
            lexicon.len(),
            config.value_width,
            model.init_scale,
            &mut init_rng,
        )?;
        let mut optimizer = Adagrad::new(&store, config.lr, ADAGRAD_EPS)?;
        for id in learner.param_ids(ParamGroup::Controller) {
            optimizer.set_lr_scale(id, config.controller_lr_scale)?;
        }
        let replay = ReplayBuffer::new(config.replay_capacity, replay_seed);
        Ok(Self {
            config,
            max_steps,
            learner,
            store,
            value,
            optimizer,
            replay,
            teacher,
            rng: ChaCha8Rng::seed_from_u64(session_seed),
            sessions: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn value(&self) -> &ValueNet {
        &self.value
    }

    pub fn optimizer(&self) -> &Adagrad {
        &self.optimizer
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn teacher(&self) -> &Teacher {
        &self.teacher
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Training sessions played so far.
    pub fn sessions(&self) -> u64 {
        self.sessions
    }

    /// Parameter updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn bypass_controller(&self) -> bool {
        self.config.kind.bypass_controller()
    }

    /// Plays one session with sampled control and, once enough transitions
    /// exist, takes one Adagrad step on the fresh transitions plus a replayed
    /// sample.
    pub fn train_step(&mut self) -> Result<StepOutcome> {
        let objects = self.teacher.lexicon().ids();
        let world = sample_world(&objects, &mut self.rng)?;
        let (session, records) = {
            let mut agent = LearnerAgent::new(&self.learner, &self.store, self.bypass_controller());
            let s = run_session(&world, &self.teacher, &mut agent, Mode::Train, self.max_steps, &mut self.rng)?;
            (s, agent.take_records())
        };
        self.sessions += 1;
        let fresh = transitions_from_session(&world, records);
        let batch_size = self.config.batch_size;
        if self.replay.len() + fresh.len() < batch_size {
            for t in fresh {
                self.replay.push(t);
            }
            return Ok(StepOutcome { session, losses: None, record: None });
        }
        let mut batch: Vec<Transition> = fresh.iter().take(batch_size).cloned().collect();
        batch.extend(self.replay.sample(batch_size - batch.len()));
        for t in fresh {
            self.replay.push(t);
        }

        let mut tape = Tape::new();
        let (loss, breakdown) =
            joint_loss(&mut tape, &self.store, &self.learner, &self.value, &batch, self.config.weights(), self.config.discounts())?;
        let grads = tape.backward(loss)?;
        self.store.zero_grad();
        grads.accumulate_into(&mut self.store);
        self.optimizer.step(&mut self.store)?;
        self.updates += 1;
        self.value.sync_target(&self.store, self.updates, self.config.target_sync_period)?;
        let record = MetricsRecord {
            step: self.sessions,
            imitation: breakdown.imitation,
            reinforce: breakdown.reinforce,
            value: breakdown.value,
            mean_reward: session.mean_reward(),
        };
        Ok(StepOutcome { session, losses: Some(breakdown), record: Some(record) })
    }

    /// Runs `n` training sessions, handing each metrics record to `sink`.
    pub fn run<F: FnMut(&MetricsRecord) -> Result<()>>(&mut self, n: u64, mut sink: F) -> Result<()> {
        for _ in 0..n {
            if let Some(r) = self.train_step()?.record {
                sink(&r)?;
            }
        }
        Ok(())
    }
}

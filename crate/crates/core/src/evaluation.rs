//! Test-time protocols: accuracy reports, baselines and reward curves.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::learner::Learner;
use crate::session::{run_session, Agent, LearnerAgent, Mode, OracleAgent, Session, SilentAgent};
use crate::teacher::{ActivityConfig, FocusPolicy, InteractionForm, Setting, Teacher};
use crate::training::{BaselineKind, MetricsRecord, Trainer};
use crate::world::{render_scene, sample_world, Lexicon, WorldState};

/// Which foci test sessions talk about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    /// All objects and combinations.
    Mixed,
    /// Only the combinations or objects inactive during training.
    HeldOut,
}

impl Configuration {
    pub fn name(self) -> &'static str {
        match self {
            Configuration::Mixed => "mixed",
            Configuration::HeldOut => "held_out",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(Configuration::Mixed),
            "held_out" | "held-out" => Ok(Configuration::HeldOut),
            _ => Err(Error::Config(format!("unknown configuration {s:?} (expected mixed or held_out)"))),
        }
    }

    fn policy(self) -> FocusPolicy {
        match self {
            Configuration::Mixed => FocusPolicy::Mixed,
            Configuration::HeldOut => FocusPolicy::HeldOut,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormStats {
    pub judged: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    pub configuration: Configuration,
    pub n_sessions: usize,
    pub judged: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_form_accuracy: BTreeMap<InteractionForm, FormStats>,
    pub mean_reward: f64,
}

impl EvalReport {
    pub fn from_sessions(setting: Setting, configuration: Configuration, sessions: &[Session]) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::Contract("a report needs at least one session".into()));
        }
        let mut per_form: BTreeMap<InteractionForm, (usize, usize)> = BTreeMap::new();
        let mut reward = 0.0;
        for i in sessions.iter().flat_map(|s| &s.transcript) {
            let e = per_form.entry(i.form).or_default();
            e.0 += 1;
            if i.reward > 0.0 {
                e.1 += 1;
            }
            reward += i.reward;
        }
        let judged: usize = per_form.values().map(|e| e.0).sum();
        let correct: usize = per_form.values().map(|e| e.1).sum();
        let ratio = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        Ok(Self {
            setting,
            configuration,
            n_sessions: sessions.len(),
            judged,
            correct,
            accuracy: ratio(correct, judged),
            per_form_accuracy: per_form
                .into_iter()
                .map(|(f, (n, c))| (f, FormStats { judged: n, correct: c, accuracy: ratio(c, n) }))
                .collect(),
            mean_reward: if judged == 0 { 0.0 } else { reward / judged as f64 },
        })
    }

    /// Accuracy on one interaction form, if any were judged.
    pub fn form_accuracy(&self, form: InteractionForm) -> Option<f64> {
        self.per_form_accuracy.get(&form).map(|s| s.accuracy)
    }
}

/// Evaluation generator for session `index`: one stream per session so
/// results do not depend on scheduling.
pub fn session_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws a world; for held-out testing redraws until an inactive focus is present.
pub fn sample_test_world(teacher: &Teacher, rng: &mut ChaCha8Rng) -> Result<WorldState> {
    let objects = teacher.lexicon().ids();
    loop {
        let w = sample_world(&objects, rng)?;
        if teacher.policy() != FocusPolicy::HeldOut || w.placements().any(|f| teacher.activity().is_inactive(f)) {
            return Ok(w);
        }
    }
}

/// Runs `n_sessions` deterministic test sessions in parallel. `make_agent`
/// builds a fresh agent per session.
pub fn evaluate_agents<'a, F>(
    teacher: &Teacher,
    configuration: Configuration,
    n_sessions: usize,
    max_steps: usize,
    seed: u64,
    make_agent: F,
) -> Result<(EvalReport, Vec<Session>)>
where
    F: Fn() -> Box<dyn Agent + Send + 'a> + Sync,
{
    if n_sessions == 0 {
        return Err(Error::Config("n_sessions must be at least 1".into()));
    }
    let sessions: Vec<Session> = (0..n_sessions as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = session_rng(seed, i);
            let world = sample_test_world(teacher, &mut rng)?;
            let mut agent = make_agent();
            run_session(&world, teacher, agent.as_mut(), Mode::Eval, max_steps, &mut rng)
        })
        .collect::<Result<_>>()?;
    let report = EvalReport::from_sessions(teacher.activity().setting, configuration, &sessions)?;
    Ok((report, sessions))
}

/// A frozen learner for evaluation.
#[derive(Clone, Copy)]
pub struct Snapshot<'a> {
    pub learner: &'a Learner,
    pub store: &'a ParamStore,
    pub bypass_controller: bool,
}

impl<'a> Snapshot<'a> {
    pub fn of(trainer: &'a Trainer) -> Self {
        Self { learner: trainer.learner(), store: trainer.store(), bypass_controller: trainer.bypass_controller() }
    }
}

/// The test teacher for an activity configuration.
pub fn test_teacher(learner: &Learner, lexicon: &Lexicon, activity: &ActivityConfig, configuration: Configuration) -> Result<Teacher> {
    Teacher::new(learner.vocab().clone(), lexicon.clone(), activity.clone(), configuration.policy())
}

/// Accuracy of a learner snapshot with mean control and the configured beam.
pub fn evaluate(
    snapshot: Snapshot<'_>,
    lexicon: &Lexicon,
    activity: &ActivityConfig,
    configuration: Configuration,
    n_sessions: usize,
    max_steps: usize,
    seed: u64,
) -> Result<EvalReport> {
    let teacher = test_teacher(snapshot.learner, lexicon, activity, configuration)?;
    if snapshot.learner.n_objects() != lexicon.len() {
        return Err(Error::Contract("learner and lexicon disagree on the number of objects".into()));
    }
    let (report, _) = evaluate_agents(&teacher, configuration, n_sessions, max_steps, seed, || {
        Box::new(LearnerAgent::new(snapshot.learner, snapshot.store, snapshot.bypass_controller))
    })?;
    Ok(report)
}

/// Accuracy of the scripted oracle (always correct).
pub fn evaluate_oracle(teacher: &Teacher, configuration: Configuration, n_sessions: usize, max_steps: usize, seed: u64) -> Result<EvalReport> {
    Ok(evaluate_agents(teacher, configuration, n_sessions, max_steps, seed, || Box::new(OracleAgent::new(teacher.clone())))?.0)
}

/// Accuracy of an agent that always says ".".
pub fn evaluate_silent(teacher: &Teacher, configuration: Configuration, n_sessions: usize, max_steps: usize, seed: u64) -> Result<EvalReport> {
    let vocab = teacher.vocab().clone();
    Ok(evaluate_agents(teacher, configuration, n_sessions, max_steps, seed, || Box::new(SilentAgent::new(vocab.clone())))?.0)
}

/// A fresh trainer for one of the compared agents: `config` with its
/// training kind replaced by `kind`.
pub fn make_baseline_agent(kind: BaselineKind, config: &ExperimentConfig) -> Result<Trainer> {
    let mut train = config.train.clone();
    train.kind = kind;
    Trainer::new(config.model.clone(), train, config.lexicon()?, config.activity_config()?, config.env.max_steps, config.seed)
}

/// How often the attention map points at the object a correctly answered
/// question is about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub questions: usize,
    pub correct: usize,
    /// Correct answers whose attention argmax is the queried object's cell.
    pub on_target: usize,
    pub fraction_on_target: f64,
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> Option<usize> {
    v.iter().enumerate().fold(None, |best, (i, &x)| match best {
        Some((_, b)) if b >= x => best,
        _ => Some((i, x)),
    }).map(|(i, _)| i)
}

/// Asks only questions and checks where the decoder's attention lands on
/// the correctly answered ones.
pub fn attention_check(
    snapshot: Snapshot<'_>,
    lexicon: &Lexicon,
    activity: &ActivityConfig,
    configuration: Configuration,
    n_sessions: usize,
    max_steps: usize,
    seed: u64,
) -> Result<AttentionReport> {
    if n_sessions == 0 {
        return Err(Error::Config("n_sessions must be at least 1".into()));
    }
    let teacher = test_teacher(snapshot.learner, lexicon, activity, configuration)?
        .with_forced_forms(vec![InteractionForm::QuestionAnswer]);
    let counts: Vec<(usize, usize, usize)> = (0..n_sessions as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = session_rng(seed, i);
            let world = sample_test_world(&teacher, &mut rng)?;
            let scene = render_scene(&world, lexicon.len());
            let mut agent = LearnerAgent::new(snapshot.learner, snapshot.store, snapshot.bypass_controller);
            agent.reset(&world, &scene)?;
            let (mut asked, mut correct, mut hits) = (0, 0, 0);
            for step in 0..max_steps {
                let prompt = teacher.generate_teacher_utterance(&world, step, &mut rng)?;
                let (response, attention, _) = agent.respond_with_attention(&prompt.utterance)?;
                let feedback = teacher.feedback(&world, &prompt, &response, &mut rng)?;
                agent.observe(&feedback)?;
                asked += 1;
                if feedback.reward > 0.0 {
                    correct += 1;
                    let (_, d) = prompt.focus.ok_or_else(|| Error::Contract("question without a focus".into()))?;
                    if argmax(&attention) == Some(d.cell_index()) {
                        hits += 1;
                    }
                }
            }
            Ok((asked, correct, hits))
        })
        .collect::<Result<_>>()?;
    let (questions, correct, on_target) =
        counts.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let fraction_on_target = if correct == 0 { 0.0 } else { on_target as f64 / correct as f64 };
    Ok(AttentionReport { questions, correct, on_target, fraction_on_target })
}

/// Reads a metrics log and returns `(step, mean of the last `window`
/// session rewards)` for every full window.
pub fn reward_curve(path: &Path, window: usize) -> Result<Vec<(u64, f64)>> {
    if window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: MetricsRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        records.push(r);
    }
    Ok(smooth(&records, window))
}

/// Trailing moving average of `mean_reward`, full windows only.
pub fn smooth(records: &[MetricsRecord], window: usize) -> Vec<(u64, f64)> {
    records
        .windows(window)
        .map(|w| (w[w.len() - 1].step, w.iter().map(|r| r.mean_reward).sum::<f64>() / window as f64))
        .collect()
}

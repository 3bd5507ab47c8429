//! Scripted teacher: sentence templates, exact-match judging and feedback.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Utterance, Vocabulary};
use crate::world::{Direction, Lexicon, ObjectId, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionForm {
    QuestionAnswer,
    StatementRepeat,
    LearnerStatement,
}

impl InteractionForm {
    pub const ALL: [InteractionForm; 3] =
        [InteractionForm::QuestionAnswer, InteractionForm::StatementRepeat, InteractionForm::LearnerStatement];

    pub fn name(self) -> &'static str {
        match self {
            InteractionForm::QuestionAnswer => "question_answer",
            InteractionForm::StatementRepeat => "statement_repeat",
            InteractionForm::LearnerStatement => "learner_statement",
        }
    }
}

/// The object and direction an interaction is about.
pub type Focus = (ObjectId, Direction);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    #[default]
    Standard,
    CompositionalGeneralization,
    KnowledgeTransfer,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Standard => "standard",
            Setting::CompositionalGeneralization => "compositional_generalization",
            Setting::KnowledgeTransfer => "knowledge_transfer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Setting::Standard, Setting::CompositionalGeneralization, Setting::KnowledgeTransfer]
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown setting {s:?}")))
    }
}

/// Which (object, direction) pairs and objects are kept out of
/// question-answer interactions during training.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ActivityConfig {
    pub setting: Setting,
    pub seed: u64,
    pub inactive_qa_pairs: BTreeSet<Focus>,
    pub inactive_qa_objects: BTreeSet<ObjectId>,
}

#[derive(Serialize, Deserialize)]
struct InactivePairRecord {
    object: String,
    direction: Direction,
}

#[derive(Serialize, Deserialize)]
struct ActivityRecord {
    setting: Setting,
    seed: u64,
    #[serde(default)]
    inactive_qa_pairs: Vec<InactivePairRecord>,
    #[serde(default)]
    inactive_qa_objects: Vec<String>,
}

impl ActivityConfig {
    pub fn standard() -> Self {
        Self::default()
    }

    pub fn is_inactive(&self, focus: Focus) -> bool {
        self.inactive_qa_pairs.contains(&focus) || self.inactive_qa_objects.contains(&focus.0)
    }

    pub fn has_inactive(&self) -> bool {
        !self.inactive_qa_pairs.is_empty() || !self.inactive_qa_objects.is_empty()
    }

    /// Every inactive (object, direction) combination.
    pub fn inactive_foci(&self, lexicon: &Lexicon) -> BTreeSet<Focus> {
        let mut out = self.inactive_qa_pairs.clone();
        for &o in &self.inactive_qa_objects {
            out.extend(Direction::ALL.iter().map(|&d| (o, d)));
        }
        out.retain(|f| f.0 .0 < lexicon.len());
        out
    }

    pub fn validate(&self, lexicon: &Lexicon) -> Result<()> {
        let known = |o: ObjectId| o.0 < lexicon.len();
        if !self.inactive_qa_pairs.iter().all(|f| known(f.0)) || !self.inactive_qa_objects.iter().all(|&o| known(o)) {
            return Err(Error::Config("inactive set references an unknown object".into()));
        }
        if self.inactive_foci(lexicon).len() >= lexicon.len() * 4 {
            return Err(Error::Config("every combination is inactive; question-answer is never possible".into()));
        }
        Ok(())
    }

    /// Structured text form with object names, for experiment directories.
    pub fn to_toml(&self, lexicon: &Lexicon) -> String {
        let rec = ActivityRecord {
            setting: self.setting,
            seed: self.seed,
            inactive_qa_pairs: self
                .inactive_qa_pairs
                .iter()
                .map(|&(o, d)| InactivePairRecord { object: lexicon.name(o).to_string(), direction: d })
                .collect(),
            inactive_qa_objects: self.inactive_qa_objects.iter().map(|&o| lexicon.name(o).to_string()).collect(),
        };
        toml::to_string(&rec).expect("activity records serialize")
    }

    pub fn from_toml(lexicon: &Lexicon, text: &str) -> Result<Self> {
        let rec: ActivityRecord = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let obj = |n: &str| lexicon.id(n).ok_or_else(|| Error::Config(format!("unknown object {n:?}")));
        let cfg = Self {
            setting: rec.setting,
            seed: rec.seed,
            inactive_qa_pairs: rec.inactive_qa_pairs.iter().map(|p| Ok((obj(&p.object)?, p.direction))).collect::<Result<_>>()?,
            inactive_qa_objects: rec.inactive_qa_objects.iter().map(|n| obj(n)).collect::<Result<_>>()?,
        };
        cfg.validate(lexicon)?;
        Ok(cfg)
    }
}

/// Samples inactive pairs (compositional generalization) or whole objects
/// (knowledge transfer). The count is `round(fraction · population)`.
pub fn build_activity_config(setting: Setting, lexicon: &Lexicon, fraction_inactive: f64, seed: u64) -> Result<ActivityConfig> {
    if !(0.0..1.0).contains(&fraction_inactive) {
        return Err(Error::Config(format!("fraction_inactive {fraction_inactive} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ActivityConfig { setting, seed, ..Default::default() };
    match setting {
        Setting::Standard => {}
        Setting::CompositionalGeneralization => {
            let mut all: Vec<Focus> =
                lexicon.ids().into_iter().flat_map(|o| Direction::ALL.into_iter().map(move |d| (o, d))).collect();
            let n = (fraction_inactive * all.len() as f64).round() as usize;
            let (chosen, _) = all.partial_shuffle(&mut rng, n);
            cfg.inactive_qa_pairs = chosen.iter().copied().collect();
        }
        Setting::KnowledgeTransfer => {
            let mut all = lexicon.ids();
            let n = (fraction_inactive * all.len() as f64).round() as usize;
            let (chosen, _) = all.partial_shuffle(&mut rng, n);
            cfg.inactive_qa_objects = chosen.iter().copied().collect();
        }
    }
    cfg.validate(lexicon)?;
    Ok(cfg)
}

/// Which foci the teacher may talk about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusPolicy {
    /// Question-answer avoids inactive foci; everything else is unrestricted.
    Training,
    /// Test sessions over all objects and combinations.
    Mixed,
    /// Test sessions only about training-inactive foci.
    HeldOut,
}

/// One teacher turn.
#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    pub utterance: Utterance,
    pub form: InteractionForm,
    pub focus: Option<Focus>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub sentence: Utterance,
    pub reward: f64,
}

/// Outcome of judging one learner response.
#[derive(Clone, Debug, PartialEq)]
pub struct Judgement {
    pub reward: f64,
    /// The canonical answer set the feedback sentence is drawn from.
    pub expected: Vec<Utterance>,
}

#[derive(Clone, Debug)]
pub struct Teacher {
    vocab: Vocabulary,
    lexicon: Lexicon,
    activity: ActivityConfig,
    policy: FocusPolicy,
    forced_forms: Option<Vec<InteractionForm>>,
}

impl Teacher {
    pub fn new(vocab: Vocabulary, lexicon: Lexicon, activity: ActivityConfig, policy: FocusPolicy) -> Result<Self> {
        for name in lexicon.names() {
            if vocab.id(name).is_none() {
                return Err(Error::Contract(format!("object {name:?} missing from vocabulary")));
            }
        }
        activity.validate(&lexicon)?;
        if policy == FocusPolicy::HeldOut && !activity.has_inactive() {
            return Err(Error::Config("held-out testing needs a setting with inactive combinations or objects".into()));
        }
        Ok(Self { vocab, lexicon, activity, policy, forced_forms: None })
    }

    /// Makes step `t` of every session use `forms[t % len]`.
    pub fn with_forced_forms(mut self, forms: Vec<InteractionForm>) -> Self {
        self.forced_forms = if forms.is_empty() { None } else { Some(forms) };
        self
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn activity(&self) -> &ActivityConfig {
        &self.activity
    }

    pub fn policy(&self) -> FocusPolicy {
        self.policy
    }

    fn words(&self, words: &[&str]) -> Utterance {
        let ids = words.iter().map(|w| self.vocab.id(w).expect("template words are in the vocabulary")).collect();
        Utterance::from_content(&self.vocab, ids).expect("template tokens are valid")
    }

    pub fn question_what(&self, d: Direction) -> Utterance {
        self.words(&["what", "is", "on", "the", d.word()])
    }

    pub fn question_where(&self, o: ObjectId) -> Utterance {
        self.words(&["where", "is", self.lexicon.name(o)])
    }

    /// `X is on the D` (template 0) or `on the D is X` (template 1).
    pub fn statement(&self, (o, d): Focus, template: usize) -> Utterance {
        let x = self.lexicon.name(o);
        if template == 0 {
            self.words(&[x, "is", "on", "the", d.word()])
        } else {
            self.words(&["on", "the", d.word(), "is", x])
        }
    }

    fn feasible_foci(&self, world: &WorldState, form: InteractionForm) -> Vec<Focus> {
        let inactive = |f: Focus| self.activity.is_inactive(f);
        world
            .placements()
            .filter(|&f| match (self.policy, form) {
                (_, InteractionForm::LearnerStatement) => self.policy != FocusPolicy::HeldOut,
                (FocusPolicy::Training, InteractionForm::QuestionAnswer) => !inactive(f),
                (FocusPolicy::HeldOut, _) => inactive(f),
                _ => true,
            })
            .collect()
    }

    /// Samples a form, a focus and a template. Forms whose foci are all
    /// excluded are dropped and the form is redrawn.
    pub fn generate_teacher_utterance<R: Rng + ?Sized>(&self, world: &WorldState, step: usize, rng: &mut R) -> Result<Prompt> {
        let mut forms: Vec<InteractionForm> = match &self.forced_forms {
            Some(f) => vec![f[step % f.len()]],
            None => InteractionForm::ALL.to_vec(),
        };
        loop {
            if forms.is_empty() {
                return Err(Error::Config(format!("no interaction form is feasible for world {}", world.describe(&self.lexicon))));
            }
            let form = forms[rng.random_range(0..forms.len())];
            let foci = self.feasible_foci(world, form);
            if foci.is_empty() {
                forms.retain(|&f| f != form);
                continue;
            }
            return Ok(match form {
                InteractionForm::LearnerStatement => Prompt { utterance: Utterance::silent(&self.vocab), form, focus: None },
                InteractionForm::QuestionAnswer => {
                    let focus = *foci.choose(rng).expect("nonempty");
                    let utterance =
                        if rng.random_bool(0.5) { self.question_what(focus.1) } else { self.question_where(focus.0) };
                    Prompt { utterance, form, focus: Some(focus) }
                }
                InteractionForm::StatementRepeat => {
                    let focus = *foci.choose(rng).expect("nonempty");
                    let utterance = self.statement(focus, rng.random_range(0..2));
                    Prompt { utterance, form, focus: Some(focus) }
                }
            });
        }
    }

    /// Recognises a free-form teacher utterance as one of the scripted
    /// templates about `world`. Questions about absent objects and false
    /// statements are not recognised.
    pub fn interpret(&self, world: &WorldState, utterance: &Utterance) -> Option<Prompt> {
        let words: Vec<&str> = utterance.content().iter().map(|&t| self.vocab.token(t)).collect();
        let dir = |w: &str| Direction::ALL.into_iter().find(|d| d.word() == w);
        let prompt = |form, focus| Some(Prompt { utterance: utterance.clone(), form, focus });
        match words.as_slice() {
            ["."] => prompt(InteractionForm::LearnerStatement, None),
            ["what", "is", "on", "the", d] => {
                let d = dir(d)?;
                prompt(InteractionForm::QuestionAnswer, Some((world.object_at(d), d)))
            }
            ["where", "is", x] => {
                let o = self.lexicon.id(x)?;
                prompt(InteractionForm::QuestionAnswer, Some((o, world.direction_of(o)?)))
            }
            [x, "is", "on", "the", d] | ["on", "the", d, "is", x] => {
                let (o, d) = (self.lexicon.id(x)?, dir(d)?);
                (world.object_at(d) == o).then_some(())?;
                prompt(InteractionForm::StatementRepeat, Some((o, d)))
            }
            _ => None,
        }
    }

    /// `{"X is on the D", "on the D is X"}` for a focus present in `world`.
    pub fn expected_answer_set(&self, world: &WorldState, focus: Focus) -> Result<Vec<Utterance>> {
        if world.object_at(focus.1) != focus.0 {
            return Err(Error::Contract(format!(
                "{} is not on the {} in this world",
                self.lexicon.name(focus.0),
                focus.1
            )));
        }
        Ok(vec![self.statement(focus, 0), self.statement(focus, 1)])
    }

    /// Judges a response to `prompt`. A learner statement is correct when it
    /// exactly states any object of the world; otherwise the feedback talks
    /// about a randomly chosen placement.
    pub fn judge<R: Rng + ?Sized>(&self, world: &WorldState, prompt: &Prompt, response: &Utterance, rng: &mut R) -> Result<Judgement> {
        match prompt.focus {
            Some(focus) => {
                let expected = self.expected_answer_set(world, focus)?;
                let reward = judge_response(response, &expected);
                Ok(Judgement { reward, expected })
            }
            None => {
                for (o, d) in world.placements() {
                    let expected = self.expected_answer_set(world, (o, d))?;
                    if judge_response(response, &expected) > 0.0 {
                        return Ok(Judgement { reward: 1.0, expected });
                    }
                }
                let d = Direction::ALL[rng.random_range(0..4)];
                let expected = self.expected_answer_set(world, (world.object_at(d), d))?;
                Ok(Judgement { reward: -1.0, expected })
            }
        }
    }

    /// Judges and composes the feedback sentence.
    pub fn feedback<R: Rng + ?Sized>(&self, world: &WorldState, prompt: &Prompt, response: &Utterance, rng: &mut R) -> Result<Feedback> {
        let j = self.judge(world, prompt, response, rng)?;
        let sentence = compose_feedback_sentence(&self.vocab, &j.expected, j.reward, rng)?;
        Ok(Feedback { sentence, reward: j.reward })
    }
}

/// `+1` iff `response` equals a member of `expected` token for token.
pub fn judge_response(response: &Utterance, expected: &[Utterance]) -> f64 {
    if expected.iter().any(|e| e.tokens() == response.tokens()) {
        1.0
    } else {
        -1.0
    }
}

/// Feedback sentence with an explicit choice of canonical form and prefix.
pub fn compose_feedback_with(vocab: &Vocabulary, expected: &[Utterance], reward: f64, form: usize, prefix: bool) -> Result<Utterance> {
    let base = expected.get(form).ok_or_else(|| Error::Contract("empty or short expected-answer set".into()))?;
    if !prefix {
        return Ok(base.clone());
    }
    let word = if reward > 0.0 { "yes" } else { "no" };
    let mut content = vec![vocab.id(word).ok_or_else(|| Error::Contract(format!("{word:?} missing from vocabulary")))?];
    content.extend_from_slice(base.content());
    Utterance::from_content(vocab, content)
}

/// Uniform canonical form; "yes"/"no" prefix with probability one half.
pub fn compose_feedback_sentence<R: Rng + ?Sized>(vocab: &Vocabulary, expected: &[Utterance], reward: f64, rng: &mut R) -> Result<Utterance> {
    if expected.is_empty() {
        return Err(Error::Contract("empty expected-answer set".into()));
    }
    let form = rng.random_range(0..expected.len());
    let prefix = rng.random_bool(0.5);
    compose_feedback_with(vocab, expected, reward, form, prefix)
}

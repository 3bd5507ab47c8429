//! Teacher grammar checked against hand-written sentences.

use std::collections::BTreeSet;

use lingo_core::teacher::{compose_feedback_with, ActivityConfig, FocusPolicy, InteractionForm, Teacher};
use lingo_core::vocab::{Utterance, Vocabulary};
use lingo_core::world::{Direction, Lexicon, WorldState, DEFAULT_OBJECTS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct GrammarOutcome {
    pub questions: usize,
    pub statements: usize,
    pub failures: Vec<String>,
}

pub fn teacher() -> Teacher {
    let lexicon = Lexicon::default();
    let vocab = Vocabulary::grounded(lexicon.names()).unwrap();
    Teacher::new(vocab, lexicon, ActivityConfig::standard(), FocusPolicy::Mixed).unwrap()
}

/// A world with `object` on `dir`; the other cells take the next objects in
/// lexicon order.
fn world_with(lexicon: &Lexicon, object: &str, dir: Direction) -> WorldState {
    let mut others = DEFAULT_OBJECTS.iter().copied().filter(|o| *o != object);
    let pairs: Vec<(Direction, &str)> =
        Direction::ALL.into_iter().map(|d| (d, if d == dir { object } else { others.next().unwrap() })).collect();
    WorldState::from_names(lexicon, &pairs).unwrap()
}

fn surfaces(us: &[Utterance]) -> BTreeSet<String> {
    us.iter().map(|u| u.surface().to_string()).collect()
}

struct Checker<'a> {
    teacher: &'a Teacher,
    failures: Vec<String>,
}

impl Checker<'_> {
    fn expect(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn parse(&self, text: &str) -> Utterance {
        Utterance::parse(self.teacher.vocab(), text).unwrap()
    }

    /// Checks recognition, the answer set, judging and the four feedback
    /// sentences of one prompt.
    fn prompt(&mut self, world: &WorldState, said: &Utterance, form: InteractionForm, x: &str, d: &str, wrong: &[String]) {
        let answers: BTreeSet<String> = [format!("{x} is on the {d}"), format!("on the {d} is {x}")].into();
        let label = said.surface().to_string();
        let Some(prompt) = self.teacher.interpret(world, said) else {
            self.failures.push(format!("{label:?} not recognised"));
            return;
        };
        self.expect(prompt.form == form, || format!("{label:?} recognised as {:?}", prompt.form));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for a in &answers {
            let j = self.teacher.judge(world, &prompt, &self.parse(a), &mut rng).unwrap();
            self.expect(j.reward == 1.0, || format!("{label:?}: {a:?} judged {}", j.reward));
            self.expect(surfaces(&j.expected) == answers, || format!("{label:?}: answer set {:?}", surfaces(&j.expected)));
        }
        for w in wrong {
            let j = self.teacher.judge(world, &prompt, &self.parse(w), &mut rng).unwrap();
            self.expect(j.reward == -1.0, || format!("{label:?}: {w:?} judged {}", j.reward));
        }
        let expected = self.teacher.expected_answer_set(world, prompt.focus.unwrap()).unwrap();
        let vocab = self.teacher.vocab();
        let hand = [
            (1.0, 0, false, format!("{x} is on the {d}")),
            (1.0, 1, true, format!("yes on the {d} is {x}")),
            (-1.0, 0, true, format!("no {x} is on the {d}")),
            (-1.0, 1, false, format!("on the {d} is {x}")),
        ];
        for (reward, f, prefix, text) in hand {
            let got = compose_feedback_with(vocab, &expected, reward, f, prefix).unwrap();
            self.expect(got.surface() == text, || format!("{label:?}: feedback {:?} instead of {text:?}", got.surface()));
        }
    }
}

/// Every object on every direction, both question forms and both statement
/// templates.
pub fn grammar_suite() -> GrammarOutcome {
    let teacher = teacher();
    let lexicon = teacher.lexicon().clone();
    let mut c = Checker { teacher: &teacher, failures: Vec::new() };
    let (mut questions, mut statements) = (0, 0);
    for x in DEFAULT_OBJECTS {
        for dir in Direction::ALL {
            let d = dir.word();
            let world = world_with(&lexicon, x, dir);
            let other_obj = DEFAULT_OBJECTS.iter().find(|o| **o != x).unwrap();
            let other_dir = Direction::ALL.into_iter().find(|o| *o != dir).unwrap().word();
            let wrong = vec![
                format!("{other_obj} is on the {d}"),
                format!("on the {other_dir} is {x}"),
                format!("{x} is on the {other_dir}"),
                format!("is {x} on the {d}"),
                format!("yes {x} is on the {d}"),
                ".".to_string(),
            ];

            let what = teacher.question_what(dir);
            let text = format!("what is on the {d}");
            c.expect(what.surface() == text, || format!("{:?} instead of {text:?}", what.surface()));
            c.prompt(&world, &c.parse(&text), InteractionForm::QuestionAnswer, x, d, &wrong);
            let where_ = teacher.question_where(lexicon.id(x).unwrap());
            let text = format!("where is {x}");
            c.expect(where_.surface() == text, || format!("{:?} instead of {text:?}", where_.surface()));
            c.prompt(&world, &c.parse(&text), InteractionForm::QuestionAnswer, x, d, &wrong);
            questions += 2;

            let focus = (lexicon.id(x).unwrap(), dir);
            for (template, text) in [format!("{x} is on the {d}"), format!("on the {d} is {x}")].into_iter().enumerate() {
                let s = teacher.statement(focus, template);
                c.expect(s.surface() == text, || format!("{:?} instead of {text:?}", s.surface()));
                c.prompt(&world, &c.parse(&text), InteractionForm::StatementRepeat, x, d, &wrong);
                statements += 1;
            }
        }
    }
    GrammarOutcome { questions, statements, failures: c.failures }
}

/// One teacher-learner-teacher exchange of the sample transcript.
pub struct Dialogue {
    pub teacher: &'static str,
    pub learner: &'static str,
    pub feedback: &'static str,
    pub reward: f64,
}

pub const SAMPLE_DIALOGUES: [Dialogue; 3] = [
    Dialogue { teacher: "what is on the north", learner: "on . cabbage yes east", feedback: "on the north is avocado", reward: -1.0 },
    Dialogue { teacher: "on the west is orange", learner: "on the west is apple", feedback: "no orange is on the west", reward: -1.0 },
    Dialogue { teacher: ".", learner: "cucumber is on the east", feedback: "cucumber is on the east", reward: 1.0 },
];

pub fn sample_dialogue_world(lexicon: &Lexicon) -> WorldState {
    let pairs =
        [(Direction::North, "avocado"), (Direction::South, "banana"), (Direction::East, "cucumber"), (Direction::West, "orange")];
    WorldState::from_names(lexicon, &pairs).unwrap()
}

/// Replays each sample dialogue through the teacher. The reward must match
/// and the listed feedback sentence must be one the teacher actually
/// produces for that response, found by searching feedback seeds.
pub fn sample_dialogues() -> Vec<String> {
    let teacher = teacher();
    let world = sample_dialogue_world(teacher.lexicon());
    let vocab = teacher.vocab();
    let mut failures = Vec::new();
    for d in &SAMPLE_DIALOGUES {
        let said = Utterance::parse(vocab, d.teacher).unwrap();
        let response = Utterance::parse(vocab, d.learner).unwrap();
        let Some(prompt) = teacher.interpret(&world, &said) else {
            failures.push(format!("{:?} not recognised", d.teacher));
            continue;
        };
        let produced = (0..256).find_map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = teacher.feedback(&world, &prompt, &response, &mut rng).unwrap();
            (f.sentence.surface() == d.feedback).then_some(f)
        });
        match produced {
            Some(f) if f.reward == d.reward => {}
            Some(f) => failures.push(format!("{:?} rewarded {} instead of {}", d.learner, f.reward, d.reward)),
            None => failures.push(format!("{:?} never produced after {:?}", d.feedback, d.learner)),
        }
    }
    failures
}

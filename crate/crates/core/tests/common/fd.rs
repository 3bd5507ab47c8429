//! Finite-difference oracle for every tape primitive and for the three
//! training losses. The numeric side never calls `backward`.

use lingo_core::autodiff::{AutodiffError, Init, ParamId, ParamStore, Tape, Tensor, Var};
use lingo_core::learner::{Learner, ModelConfig, ParamGroup};
use lingo_core::session::TurnRecord;
use lingo_core::teacher::{ActivityConfig, FocusPolicy, Teacher};
use lingo_core::training::{imitation_loss, reinforce_loss, value_loss, Discounts, ReplayControl, Transition, ValueInput, ValueNet};
use lingo_core::vocab::Vocabulary;
use lingo_core::world::{sample_world, Direction, Lexicon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PRIMITIVE_STEP: f64 = 1e-6;
pub const COMPOSITE_STEP: f64 = 1e-6;

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>>;

/// One seeded instance of a primitive: its inputs and how to apply it.
pub struct Case {
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn dims(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=4)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], draw: impl Fn(&mut ChaCha8Rng) -> f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| draw(rng)).collect()).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-2.0..2.0)
}

/// Magnitude at least 0.1, keeping the rectifier's kink out of reach of the step.
fn off_kink(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(0.1..2.0);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

fn positive(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.2..2.0)
}

fn case(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError> + 'static) -> Case {
    Case { inputs, build: Box::new(build) }
}

fn unary(rng: &mut ChaCha8Rng, draw: fn(&mut ChaCha8Rng) -> f64, op: fn(&mut Tape, Var) -> Var) -> Case {
    let r = rng.random_range(1..=3);
    let shape = dims(rng, r);
    case(vec![tensor(rng, &shape, draw)], move |t, x| Ok(op(t, x[0])))
}

fn binary(rng: &mut ChaCha8Rng, op: fn(&mut Tape, Var, Var) -> Result<Var, AutodiffError>) -> Case {
    let r = rng.random_range(1..=3);
    let shape = dims(rng, r);
    case(vec![tensor(rng, &shape, normal), tensor(rng, &shape, normal)], move |t, x| op(t, x[0], x[1]))
}

pub const PRIMITIVES: [&str; 23] = [
    "matmul",
    "add",
    "sub",
    "hadamard",
    "scalar_mul",
    "add_scalar",
    "relu",
    "tanh",
    "sigmoid",
    "square",
    "negate",
    "ln",
    "reciprocal",
    "softmax",
    "log_softmax",
    "embedding",
    "concat",
    "sum",
    "mean",
    "sum_all",
    "spatial_conv",
    "reshape",
    "select",
];

pub fn primitive_case(name: &str, seed: u64) -> Case {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000);
    match name {
        "matmul" => {
            let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
            let (sa, sb) = match seed % 3 {
                0 => (vec![m, k], vec![k, n]),
                1 => (vec![m, k], vec![k]),
                _ => (vec![k], vec![k, n]),
            };
            case(vec![tensor(rng, &sa, normal), tensor(rng, &sb, normal)], |t, x| t.matmul(x[0], x[1]))
        }
        "add" => binary(rng, Tape::add),
        "sub" => binary(rng, Tape::sub),
        "hadamard" => binary(rng, Tape::hadamard),
        "scalar_mul" => {
            let c = normal(rng);
            let shape = dims(rng, 2);
            case(vec![tensor(rng, &shape, normal)], move |t, x| Ok(t.scalar_mul(x[0], c)))
        }
        "add_scalar" => {
            let c = normal(rng);
            let shape = dims(rng, 2);
            case(vec![tensor(rng, &shape, normal)], move |t, x| Ok(t.add_scalar(x[0], c)))
        }
        "relu" => unary(rng, off_kink, Tape::relu),
        "tanh" => unary(rng, normal, Tape::tanh),
        "sigmoid" => unary(rng, normal, Tape::sigmoid),
        "square" => unary(rng, normal, Tape::square),
        "negate" => unary(rng, normal, Tape::negate),
        "ln" => {
            let shape = dims(rng, 2);
            case(vec![tensor(rng, &shape, positive)], |t, x| t.ln(x[0]))
        }
        "reciprocal" => {
            let shape = dims(rng, 2);
            let x = tensor(rng, &shape, |r| if r.random_bool(0.5) { positive(r) } else { -positive(r) });
            case(vec![x], |t, x| t.reciprocal(x[0]))
        }
        "softmax" | "log_softmax" => {
            let r = rng.random_range(1..=3);
            let shape = dims(rng, r);
            let axis = rng.random_range(0..r);
            let x = tensor(rng, &shape, normal);
            if name == "softmax" {
                case(vec![x], move |t, x| t.softmax(x[0], axis))
            } else {
                case(vec![x], move |t, x| t.log_softmax(x[0], axis))
            }
        }
        "embedding" => {
            let shape = dims(rng, 2);
            let index = rng.random_range(0..shape[0]);
            case(vec![tensor(rng, &shape, normal)], move |t, x| t.embedding(x[0], index))
        }
        "concat" => {
            let r = rng.random_range(1..=3);
            let base = dims(rng, r);
            let axis = rng.random_range(0..r);
            let n = rng.random_range(1..=3);
            let inputs = (0..n)
                .map(|_| {
                    let mut s = base.clone();
                    s[axis] = rng.random_range(1..=3);
                    tensor(rng, &s, normal)
                })
                .collect();
            case(inputs, move |t, x| t.concat(x, axis))
        }
        "sum" | "mean" => {
            let r = rng.random_range(1..=3);
            let shape = dims(rng, r);
            let axis = rng.random_range(0..r);
            let x = tensor(rng, &shape, normal);
            if name == "sum" {
                case(vec![x], move |t, x| t.sum(x[0], axis))
            } else {
                case(vec![x], move |t, x| t.mean(x[0], axis))
            }
        }
        "sum_all" => {
            let shape = dims(rng, 3);
            case(vec![tensor(rng, &shape, normal)], |t, x| Ok(t.sum_all(x[0])))
        }
        "spatial_conv" => {
            let [ci, co, h, w] = [0; 4].map(|_| rng.random_range(1..=3));
            let kh = [1, 3][rng.random_range(0..2)];
            let kw = [1, 3][rng.random_range(0..2)];
            let input = tensor(rng, &[ci, h, w], normal);
            let kernel = tensor(rng, &[co, ci, kh, kw], normal);
            case(vec![input, kernel], |t, x| t.spatial_conv(x[0], x[1]))
        }
        "reshape" => {
            let shape = dims(rng, 3);
            let target = [shape[0] * shape[1], shape[2]];
            case(vec![tensor(rng, &shape, normal)], move |t, x| t.reshape(x[0], &target))
        }
        "select" => {
            let shape = dims(rng, 2);
            let index = rng.random_range(0..shape[0] * shape[1]);
            case(vec![tensor(rng, &shape, normal)], move |t, x| t.select(x[0], index))
        }
        other => panic!("no case generator for {other}"),
    }
}

/// Runs a case forward and returns the output values.
fn forward(c: &Case, inputs: &[Tensor]) -> Vec<f64> {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x)).collect();
    let out = (c.build)(&mut t, &vars).unwrap();
    t.value(out).to_vec()
}

/// Worst relative error of the gradient of `sum(w * op(inputs))` over every
/// input coordinate, with `w` a fixed random contraction vector.
pub fn check_primitive(c: &Case, seed: u64) -> f64 {
    let out_len = forward(c, &c.inputs).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_ffee);
    let w: Vec<f64> = (0..out_len).map(|_| normal(&mut rng)).collect();

    let mut t = Tape::new();
    let vars: Vec<Var> = c.inputs.iter().map(|x| t.leaf(&x.clone().with_requires_grad(true))).collect();
    let out = (c.build)(&mut t, &vars).unwrap();
    let shape = t.shape(out).to_vec();
    let wv = t.constant(&shape, w.clone()).unwrap();
    let prod = t.hadamard(out, wv).unwrap();
    let loss = t.sum_all(prod);
    let grads = t.backward(loss).unwrap();

    let contract = |inputs: &[Tensor]| forward(c, inputs).iter().zip(&w).map(|(y, w)| y * w).sum::<f64>();
    let mut worst = 0.0f64;
    for (i, x) in c.inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = c.inputs.to_vec();
            let mut minus = c.inputs.to_vec();
            plus[i].data_mut()[j] += PRIMITIVE_STEP;
            minus[i].data_mut()[j] -= PRIMITIVE_STEP;
            let numeric = (contract(&plus) - contract(&minus)) / (2.0 * PRIMITIVE_STEP);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

/// Largest gradient magnitude that flows through `stop_gradient`; must be 0.
pub fn stop_gradient_leak(seed: u64) -> f64 {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let shape = dims(rng, 2);
    let x = tensor(rng, &shape, normal);
    let mut t = Tape::new();
    let xv = t.leaf(&x.with_requires_grad(true));
    let s = t.stop_gradient(xv);
    let sq = t.square(s);
    let direct = t.sum_all(xv);
    let blocked = t.sum_all(sq);
    let loss = t.add(direct, blocked).unwrap();
    let g = t.backward(loss).unwrap();
    // Only the direct path contributes, so every entry must be exactly 1.
    g.wrt(xv).unwrap().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
}

/// A small learner, value network and replay batch with randomised weights.
pub struct LossFixture {
    pub learner: Learner,
    pub value: ValueNet,
    pub store: ParamStore,
    pub batch: Vec<Transition>,
}

pub const STORED: Discounts = Discounts { gamma: 0.99, lambda: 0.99, replay_control: ReplayControl::Stored };

fn randomize(store: &mut ParamStore, ids: &[ParamId], rng: &mut ChaCha8Rng, scale: f64) {
    for &id in ids {
        let t = Tensor::build(store.get(id).shape(), Init::Uniform(scale), rng).unwrap();
        store.assign(id, t.data()).unwrap();
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn loss_fixture(seed: u64) -> LossFixture {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let lexicon = Lexicon::default();
    let vocab = Vocabulary::grounded(lexicon.names()).unwrap();
    let config = ModelConfig { hidden: 5, embed: 4, obj_features: 3, dir_channels: 2, init_scale: 0.5, ..ModelConfig::default() };
    let mut store = ParamStore::new();
    let learner = Learner::new(config, vocab.clone(), lexicon.len(), &mut store, rng).unwrap();
    let mut value = ValueNet::new(&mut store, ValueInput::StateAndScene, 5, lexicon.len(), 4, 0.5, rng).unwrap();
    let all: Vec<ParamId> = store.ids().collect();
    randomize(&mut store, &all, rng, 0.5);
    value.sync(&store);
    randomize(&mut store, &value.param_ids(), rng, 0.5);

    let teacher = Teacher::new(vocab, lexicon.clone(), ActivityConfig::standard(), FocusPolicy::Mixed).unwrap();
    let h = learner.hidden();
    let batch = (0..2)
        .map(|i| {
            let world = sample_world(&lexicon.ids(), rng).unwrap();
            let d = Direction::ALL[rng.random_range(0..4)];
            let focus = (world.object_at(d), d);
            let prompt = teacher.question_what(d);
            let response = teacher.statement(focus, rng.random_range(0..2));
            let feedback = teacher.statement(focus, rng.random_range(0..2));
            let terminal = i == 1;
            Transition {
                world,
                turn: TurnRecord {
                    step_index: i,
                    prior_h: uniform_vec(rng, h, 0.5),
                    teacher: prompt.tokens().to_vec(),
                    response: response.tokens().to_vec(),
                    k: uniform_vec(rng, h, 0.5),
                    noise: uniform_vec(rng, h, 1.0),
                    feedback: feedback.tokens().to_vec(),
                    reward: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                },
                next_teacher: (!terminal).then(|| teacher.question_where(focus.0).tokens().to_vec()),
            }
        })
        .collect();
    LossFixture { learner, value, store, batch }
}

pub const COMPOSITES: [&str; 3] = ["imitation", "reinforce", "value"];

fn composite_loss(name: &str, f: &LossFixture, t: &mut Tape, store: &ParamStore) -> Var {
    let (l, v, b) = (&f.learner, &f.value, &f.batch);
    match name {
        "imitation" => imitation_loss(t, store, l, v, b),
        "reinforce" => reinforce_loss(t, store, l, v, b, STORED),
        "value" => value_loss(t, store, l, v, b, STORED),
        other => panic!("unknown loss {other}"),
    }
    .unwrap()
}

/// Parameters each loss is checked against.
pub fn composite_params(name: &str, f: &LossFixture) -> Vec<ParamId> {
    match name {
        "imitation" => f.learner.param_ids(ParamGroup::Language),
        "reinforce" => f.learner.param_ids(ParamGroup::Controller),
        _ => f.value.param_ids(),
    }
}

/// Worst relative error over up to `per_param` coordinates of every checked
/// parameter tensor, with a seed-dependent starting offset.
pub fn check_composite(name: &str, seed: u64, per_param: usize) -> f64 {
    let f = loss_fixture(seed);
    let mut t = Tape::new();
    let loss = composite_loss(name, &f, &mut t, &f.store);
    let grads = t.backward(loss).unwrap();
    let mut with_grads = f.store.clone();
    with_grads.zero_grad();
    grads.accumulate_into(&mut with_grads);

    let eval = |store: &ParamStore| {
        let mut t = Tape::new();
        let l = composite_loss(name, &f, &mut t, store);
        t.scalar(l)
    };
    let mut probe = f.store.clone();
    let mut worst = 0.0f64;
    for id in composite_params(name, &f) {
        let n = f.store.get(id).numel();
        let analytic = with_grads.get(id).grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let stride = n.div_ceil(per_param).max(1);
        let offset = (seed as usize) % stride;
        for i in (offset..n).step_by(stride) {
            let orig = f.store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + COMPOSITE_STEP;
            let up = eval(&probe);
            probe.get_mut(id).data_mut()[i] = orig - COMPOSITE_STEP;
            let down = eval(&probe);
            probe.get_mut(id).data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * COMPOSITE_STEP)));
        }
    }
    worst
}

//! Imitation, policy-gradient and value losses over a batch of transitions.

use serde::{Deserialize, Serialize};

use super::replay::Transition;
use super::value::{td_error, ValueNet};
use super::ReplayControl;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::learner::{gaussian_log_prob_on_tape, Learner};
use crate::vocab::TokenId;
use crate::world::render_scene;

/// Scalars multiplying each loss term in the joint objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub imitation: f64,
    pub reinforce: f64,
    pub value: f64,
}

impl LossWeights {
    pub const JOINT: Self = Self { imitation: 1.0, reinforce: 1.0, value: 1.0 };
}

/// Unweighted batch means of each term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub imitation: f64,
    pub reinforce: f64,
    pub value: f64,
}

/// Discounting and replay settings of the reinforcement terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discounts {
    /// Discount in the td-error.
    pub gamma: f64,
    /// Bootstrap weight in the value regression target.
    pub lambda: f64,
    pub replay_control: ReplayControl,
}

/// Per-transition tape values.
struct Parts {
    /// `log p(feedback | h_t, scene)`.
    log_prob: Option<Var>,
    /// `log p(k | c, std)`.
    control_log_prob: Option<Var>,
    value_cur: Option<Var>,
    target_next: Option<f64>,
    reward: f64,
}

fn content(tokens: &[TokenId]) -> Result<&[TokenId]> {
    match tokens.split_last() {
        Some((_, c)) => Ok(c),
        None => Err(Error::Contract("stored sentence is empty".into())),
    }
}

#[allow(clippy::too_many_arguments)]
fn forward(
    t: &mut Tape,
    store: &ParamStore,
    learner: &Learner,
    value: &ValueNet,
    tr: &Transition,
    imitation: bool,
    rl: bool,
    replay_control: ReplayControl,
) -> Result<Parts> {
    let scene = render_scene(&tr.world, learner.n_objects());
    let f = learner.scene_features(t, store, &scene)?;
    let prior = t.constant_vec(&tr.turn.prior_h);
    let (h_t, _) = learner.run_sentence(t, store, f, prior, content(&tr.turn.teacher)?, false)?;
    let mut parts = Parts { log_prob: None, control_log_prob: None, value_cur: None, target_next: None, reward: tr.turn.reward };
    let need_feedback_pass = imitation || (rl && !tr.is_terminal());
    let h_fb = if need_feedback_pass {
        let (h_fb, lp) = learner.run_sentence(t, store, f, h_t, content(&tr.turn.feedback)?, imitation)?;
        parts.log_prob = lp;
        Some(h_fb)
    } else {
        None
    };
    if rl {
        let (c, std) = learner.control_on_tape(t, store, h_t)?;
        let k = match replay_control {
            ReplayControl::Stored => tr.turn.k.clone(),
            ReplayControl::Noise => {
                if tr.turn.noise.len() != tr.turn.k.len() {
                    return Err(Error::Contract("stored noise and control differ in length".into()));
                }
                let (cv, sv) = (t.value(c), t.value(std));
                cv.iter().zip(sv).zip(&tr.turn.noise).map(|((c, s), e)| c + s * e).collect()
            }
        };
        let k = t.constant_vec(&k);
        parts.control_log_prob = Some(gaussian_log_prob_on_tape(t, k, c, std)?);
        let counts = scene.object_counts();
        let h_cur = t.stop_gradient(h_t);
        let x = value.features_on_tape(t, h_cur, &counts)?;
        parts.value_cur = Some(value.forward_live(t, store, x)?);
        if let (Some(next), Some(h_fb)) = (&tr.next_teacher, h_fb) {
            let next_prior = t.stop_gradient(h_fb);
            let (h_next, _) = learner.run_sentence(t, store, f, next_prior, content(next)?, false)?;
            let h_next = t.stop_gradient(h_next);
            let x = value.features_on_tape(t, h_next, &counts)?;
            let v = value.forward_target(t, store, x)?;
            parts.target_next = Some(t.scalar(v));
        }
    }
    Ok(parts)
}

/// The weighted joint loss on `t` plus its components. Terms with zero
/// weight are neither built nor reported.
pub fn joint_loss(
    t: &mut Tape,
    store: &ParamStore,
    learner: &Learner,
    value: &ValueNet,
    batch: &[Transition],
    weights: LossWeights,
    discounts: Discounts,
) -> Result<(Var, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let imitation = weights.imitation != 0.0;
    let rl = weights.reinforce != 0.0 || weights.value != 0.0;
    let n = batch.len() as f64;
    let mut terms: Vec<Var> = Vec::new();
    let mut out = LossBreakdown::default();
    for tr in batch {
        let p = forward(t, store, learner, value, tr, imitation, rl, discounts.replay_control)?;
        if let Some(lp) = p.log_prob {
            out.imitation -= t.scalar(lp) / n;
            terms.push(t.scalar_mul(lp, -weights.imitation / n));
        }
        if let (Some(clp), Some(v)) = (p.control_log_prob, p.value_cur) {
            let v_cur = t.scalar(v);
            let delta = td_error(p.reward, discounts.gamma, p.target_next, v_cur);
            out.reinforce -= t.scalar(clp) * delta / n;
            if weights.reinforce != 0.0 {
                terms.push(t.scalar_mul(clp, -delta * weights.reinforce / n));
            }
            let y = td_error(p.reward, discounts.lambda, p.target_next, 0.0);
            let target = t.constant_vec(&[y]);
            let err = t.sub(target, v)?;
            let sq = t.square(err);
            out.value += (y - v_cur).powi(2) / n;
            if weights.value != 0.0 {
                terms.push(t.scalar_mul(sq, weights.value / n));
            }
        }
    }
    let mut total = match terms.split_first() {
        Some((&first, _)) => first,
        None => return Err(Error::Contract("all loss weights are zero".into())),
    };
    for &v in &terms[1..] {
        total = t.add(total, v)?;
    }
    Ok((total, out))
}

fn single(weights: LossWeights, t: &mut Tape, store: &ParamStore, learner: &Learner, value: &ValueNet, batch: &[Transition], d: Discounts) -> Result<Var> {
    Ok(joint_loss(t, store, learner, value, batch, weights, d)?.0)
}

/// Mean `−log p(feedback)` over the batch.
pub fn imitation_loss(t: &mut Tape, store: &ParamStore, learner: &Learner, value: &ValueNet, batch: &[Transition]) -> Result<Var> {
    let w = LossWeights { imitation: 1.0, reinforce: 0.0, value: 0.0 };
    single(w, t, store, learner, value, batch, Discounts { gamma: 0.0, lambda: 0.0, replay_control: ReplayControl::Noise })
}

/// Mean `−log p(k | c, std)·δ` with `δ` held constant.
pub fn reinforce_loss(t: &mut Tape, store: &ParamStore, learner: &Learner, value: &ValueNet, batch: &[Transition], d: Discounts) -> Result<Var> {
    let w = LossWeights { imitation: 0.0, reinforce: 1.0, value: 0.0 };
    single(w, t, store, learner, value, batch, d)
}

/// Mean `(r + λ·V⁻(next) − V(cur))²`.
pub fn value_loss(t: &mut Tape, store: &ParamStore, learner: &Learner, value: &ValueNet, batch: &[Transition], d: Discounts) -> Result<Var> {
    let w = LossWeights { imitation: 0.0, reinforce: 0.0, value: 1.0 };
    single(w, t, store, learner, value, batch, d)
}

//! Controller: `c = τ(h) + h`, a diagonal Gaussian around `c` for exploration.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{AgentState, Learner};
use crate::autodiff::{AutodiffError, ParamStore, Tape, Var};
use crate::error::Result;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// The controller's output for one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSample {
    /// Deterministic control `c = τ(h) + h`.
    pub c: Vec<f64>,
    pub std: Vec<f64>,
    /// Decoder initial state; `c` itself unless exploring.
    pub k: Vec<f64>,
    pub log_prob: f64,
}

impl ControlSample {
    /// The control used when the controller is bypassed: `k = c = h_last`.
    pub fn identity(h_last: &[f64], std: f64) -> Self {
        let std = vec![std; h_last.len()];
        let log_prob = gaussian_log_prob(h_last, h_last, &std);
        Self { c: h_last.to_vec(), std, k: h_last.to_vec(), log_prob }
    }

    /// The standardised draw `(k - c) / std`.
    pub fn noise(&self) -> Vec<f64> {
        self.k.iter().zip(&self.c).zip(&self.std).map(|((k, c), s)| (k - c) / s).collect()
    }
}

/// Log-density of `k` under independent Gaussians with means `c` and
/// standard deviations `std`.
pub fn gaussian_log_prob(k: &[f64], c: &[f64], std: &[f64]) -> f64 {
    k.iter()
        .zip(c)
        .zip(std)
        .map(|((&k, &c), &s)| {
            let z = (k - c) / s;
            -0.5 * z * z - s.ln() - HALF_LN_2PI
        })
        .sum()
}

/// [`gaussian_log_prob`] on the tape, differentiable in `c` and `std`.
pub fn gaussian_log_prob_on_tape(t: &mut Tape, k: Var, c: Var, std: Var) -> Result<Var, AutodiffError> {
    let diff = t.sub(k, c)?;
    let inv = t.reciprocal(std)?;
    let z = t.hadamard(diff, inv)?;
    let z2 = t.square(z);
    let half = t.scalar_mul(z2, 0.5);
    let ls = t.ln(std)?;
    let term = t.add(half, ls)?;
    let term = t.add_scalar(term, HALF_LN_2PI);
    let s = t.sum_all(term);
    Ok(t.negate(s))
}

impl Learner {
    /// `(c, std)` from `stop(h_last)`. Gradients reach only the controller.
    pub fn control_on_tape(&self, t: &mut Tape, store: &ParamStore, h_last: Var) -> Result<(Var, Var)> {
        let h = t.stop_gradient(h_last);
        let ids = &self.ids;
        let hid = self.linear(t, store, ids.tau1_w, ids.tau1_b, h)?;
        let hid = t.relu(hid);
        let tau = self.linear(t, store, ids.tau2_w, ids.tau2_b, hid)?;
        let c = t.add(tau, h)?;
        let s = self.linear(t, store, ids.std_w, ids.std_b, c)?;
        let s = t.relu(s);
        let std = t.add_scalar(s, self.config.min_std);
        Ok((c, std))
    }

    /// Computes the control for `state`; with `explore` the decoder state is
    /// sampled as `k = c + std ⊙ ε`, otherwise `k = c`.
    pub fn control<R: Rng + ?Sized>(&self, store: &ParamStore, state: &AgentState, explore: bool, rng: &mut R) -> Result<ControlSample> {
        self.check_state(&state.h_last)?;
        let mut t = Tape::new();
        let h = t.constant_vec(&state.h_last);
        let (c, std) = self.control_on_tape(&mut t, store, h)?;
        let c = t.value(c).to_vec();
        let std = t.value(std).to_vec();
        let k: Vec<f64> = if explore {
            c.iter()
                .zip(&std)
                .map(|(&m, &s)| {
                    let e: f64 = StandardNormal.sample(rng);
                    m + s * e
                })
                .collect()
        } else {
            c.clone()
        };
        let log_prob = gaussian_log_prob(&k, &c, &std);
        Ok(ControlSample { c, std, k, log_prob })
    }
}

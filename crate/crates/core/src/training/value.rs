//! State-value network with a periodically synchronised target copy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Init, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// What the value network sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueInput {
    /// `[h_last; object counts]`.
    #[default]
    StateAndScene,
    /// Object counts only.
    SceneOnly,
}

/// Two-layer rectified-linear regressor; live weights sit in the shared
/// [`ParamStore`], the target copy is a plain snapshot.
#[derive(Clone, Debug)]
pub struct ValueNet {
    ids: [ParamId; 4],
    input: ValueInput,
    hidden: usize,
    n_objects: usize,
    target: Vec<Vec<f64>>,
    syncs: u64,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input: ValueInput,
        hidden: usize,
        n_objects: usize,
        width: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("value network width must be at least 1".into()));
        }
        let in_dim = match input {
            ValueInput::StateAndScene => hidden + n_objects,
            ValueInput::SceneOnly => n_objects,
        };
        let w = Init::Uniform(init_scale);
        let ids = [
            store.add("value.w1", Tensor::build(&[width, in_dim], w, rng)?),
            store.add("value.b1", Tensor::zeros(&[width])?),
            store.add("value.w2", Tensor::build(&[1, width], w, rng)?),
            store.add("value.b2", Tensor::zeros(&[1])?),
        ];
        let mut net = Self { ids, input, hidden, n_objects, target: Vec::new(), syncs: 0 };
        net.sync(store);
        Ok(net)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.ids.to_vec()
    }

    pub fn input(&self) -> ValueInput {
        self.input
    }

    pub fn sync_count(&self) -> u64 {
        self.syncs
    }

    pub fn target(&self) -> &[Vec<f64>] {
        &self.target
    }

    /// Restores a checkpointed target snapshot and sync counter.
    pub fn set_target(&mut self, target: Vec<Vec<f64>>, syncs: u64) -> Result<()> {
        if target.len() != 4 {
            return Err(Error::Checkpoint(format!("value target has {} tensors, expected 4", target.len())));
        }
        self.target = target;
        self.syncs = syncs;
        Ok(())
    }

    /// Network input for a dialogue state and per-object counts.
    pub fn features(&self, h: &[f64], counts: &[f64]) -> Vec<f64> {
        match self.input {
            ValueInput::StateAndScene => h.iter().chain(counts).copied().collect(),
            ValueInput::SceneOnly => counts.to_vec(),
        }
    }

    /// Builds the input on the tape; `h` is expected to be gradient-stopped.
    pub fn features_on_tape(&self, t: &mut Tape, h: Var, counts: &[f64]) -> Result<Var, AutodiffError> {
        let c = t.constant_vec(counts);
        match self.input {
            ValueInput::StateAndScene => t.concat(&[h, c], 0),
            ValueInput::SceneOnly => Ok(c),
        }
    }

    fn mlp(t: &mut Tape, w: [Var; 4], x: Var) -> Result<Var, AutodiffError> {
        let h = t.matmul(w[0], x)?;
        let h = t.add(h, w[1])?;
        let h = t.relu(h);
        let y = t.matmul(w[2], h)?;
        t.add(y, w[3])
    }

    /// `V_υ(x)` with live parameters, shape `[1]`.
    pub fn forward_live(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = self.ids.map(|id| t.param(store, id));
        Self::mlp(t, w, x)
    }

    /// `V_υ⁻(x)` with the frozen target parameters, shape `[1]`.
    pub fn forward_target(&self, t: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let mut w = [x; 4];
        for (i, id) in self.ids.iter().enumerate() {
            w[i] = t.constant(store.get(*id).shape(), self.target[i].clone())?;
        }
        Self::mlp(t, w, x)
    }

    pub fn value(&self, store: &ParamStore, x: &[f64]) -> Result<f64> {
        let mut t = Tape::new();
        let xv = t.constant_vec(x);
        let v = self.forward_live(&mut t, store, xv)?;
        Ok(t.scalar(v))
    }

    pub fn target_value(&self, store: &ParamStore, x: &[f64]) -> Result<f64> {
        let mut t = Tape::new();
        let xv = t.constant_vec(x);
        let v = self.forward_target(&mut t, store, xv)?;
        Ok(t.scalar(v))
    }

    /// Copies the live parameters into the target.
    pub fn sync(&mut self, store: &ParamStore) {
        self.target = self.ids.iter().map(|&id| store.get(id).data().to_vec()).collect();
        self.syncs += 1;
    }

    /// Syncs when `step` is a multiple of `period`; returns whether it did.
    pub fn sync_target(&mut self, store: &ParamStore, step: u64, period: u64) -> Result<bool> {
        if period == 0 {
            return Err(Error::Contract("target sync period must be at least 1".into()));
        }
        if step.is_multiple_of(period) {
            self.sync(store);
            return Ok(true);
        }
        Ok(false)
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// `δ = r + γ·V⁻(next) − V(cur)`, with the bootstrap dropped at terminal steps.
pub fn td_error(reward: f64, gamma: f64, target_next: Option<f64>, value_cur: f64) -> f64 {
    reward + target_next.map_or(0.0, |v| gamma * v) - value_cur
}

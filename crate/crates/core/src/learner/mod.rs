//! Hierarchical-RNN learner: visual attention encoder, a shared GRU used both
//! to encode teacher sentences and to generate responses, and a controller
//! that turns the dialogue state into the decoder's initial state.

mod controller;
mod decode;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Init, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Utterance, Vocabulary};
use crate::world::{Scene, CELLS, GRID};

pub use controller::{gaussian_log_prob, gaussian_log_prob_on_tape, ControlSample};
pub use decode::BeamHypothesis;

/// Model sizes and decoding settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
    pub obj_features: usize,
    pub dir_channels: usize,
    pub init_scale: f64,
    pub beam_width: usize,
    pub max_len: usize,
    pub min_std: f64,
    /// Exploration standard deviation at initialisation, the same in every
    /// dimension.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 64, embed: 32, obj_features: 16, dir_channels: 8, init_scale: 0.08, beam_width: 3, max_len: 8, min_std: 0.01, init_std: 0.5 }
    }
}

impl ModelConfig {
    pub fn visual_dim(&self) -> usize {
        self.obj_features + self.dir_channels
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.hidden, self.embed, self.obj_features, self.dir_channels, self.beam_width, self.max_len];
        if sizes.contains(&0) {
            return Err(Error::Config("model sizes, beam_width and max_len must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!("init_scale {} must be finite and nonnegative", self.init_scale)));
        }
        if self.min_std.is_nan() || self.min_std <= 0.0 {
            return Err(Error::Config(format!("min_std {} must be positive", self.min_std)));
        }
        if !(self.init_std >= self.min_std && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std {} must be finite and at least min_std", self.init_std)));
        }
        Ok(())
    }
}

/// The cross-turn dialogue state `h_last`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub h_last: Vec<f64>,
}

impl AgentState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h_last: vec![0.0; hidden] }
    }
}

#[derive(Clone, Debug)]
struct GruIds {
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_n: ParamId,
}

#[derive(Clone, Debug)]
struct LearnerIds {
    embedding: ParamId,
    gru: GruIds,
    obj_conv: ParamId,
    dir_maps: ParamId,
    att_w: ParamId,
    att_b: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
    out_wh: ParamId,
    out_wv: ParamId,
    out_b: ParamId,
    tau1_w: ParamId,
    tau1_b: ParamId,
    tau2_w: ParamId,
    tau2_b: ParamId,
    std_w: ParamId,
    std_b: ParamId,
}

/// Output of the visual encoder.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// Gated, attention-pooled feature vector `[obj_features + dir_channels]`.
    pub vector: Var,
    /// Attention over the 9 grid cells, row-major.
    pub attention: Var,
    pub gate: Var,
}

/// Which parameters belong to which part of the learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Embeddings, GRU, visual encoder and output projection.
    Language,
    /// Residue transform and standard-deviation head.
    Controller,
}

/// Handles into a [`ParamStore`]; the values live in the store.
#[derive(Clone, Debug)]
pub struct Learner {
    config: ModelConfig,
    vocab: Vocabulary,
    n_objects: usize,
    ids: LearnerIds,
}

impl Learner {
    /// Registers all learner parameters in `store`. Weights are uniform in
    /// `±init_scale`, biases zero, and the residue transform's output layer
    /// starts at zero so the controller begins as the identity. The std head
    /// starts with zero weights and a bias giving `init_std` everywhere.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab: Vocabulary, n_objects: usize, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if n_objects == 0 {
            return Err(Error::Config("scene needs at least one object channel".into()));
        }
        let (h, e, a, v) = (config.hidden, config.embed, config.visual_dim(), vocab.len());
        let s = config.init_scale;
        let mut add = |name: &str, shape: &[usize], init: Init| -> Result<ParamId> {
            Ok(store.add(format!("learner.{name}"), Tensor::build(shape, init, rng)?))
        };
        let w = Init::Uniform(s);
        let z = Init::Zeros;
        let gru = GruIds {
            w_z: add("gru.w_z", &[h, e + a], w)?,
            u_z: add("gru.u_z", &[h, h], w)?,
            b_z: add("gru.b_z", &[h], z)?,
            w_r: add("gru.w_r", &[h, e + a], w)?,
            u_r: add("gru.u_r", &[h, h], w)?,
            b_r: add("gru.b_r", &[h], z)?,
            w_n: add("gru.w_n", &[h, e + a], w)?,
            u_n: add("gru.u_n", &[h, h], w)?,
            b_n: add("gru.b_n", &[h], z)?,
        };
        let ids = LearnerIds {
            embedding: add("embedding", &[v, e], w)?,
            gru,
            obj_conv: add("visual.obj_conv", &[config.obj_features, n_objects, 1, 1], w)?,
            dir_maps: add("visual.dir_maps", &[config.dir_channels, GRID, GRID], w)?,
            att_w: add("visual.att_w", &[a, h], w)?,
            att_b: add("visual.att_b", &[a], z)?,
            gate_w: add("visual.gate_w", &[a, h], w)?,
            gate_b: add("visual.gate_b", &[a], z)?,
            out_wh: add("out.w_h", &[v, h], w)?,
            out_wv: add("out.w_v", &[v, a], w)?,
            out_b: add("out.b", &[v], z)?,
            tau1_w: add("controller.tau1_w", &[h, h], w)?,
            tau1_b: add("controller.tau1_b", &[h], z)?,
            tau2_w: add("controller.tau2_w", &[h, h], z)?,
            tau2_b: add("controller.tau2_b", &[h], z)?,
            std_w: add("controller.std_w", &[h, h], z)?,
            std_b: add("controller.std_b", &[h], Init::Constant(config.init_std - config.min_std))?,
        };
        Ok(Self { config, vocab, n_objects, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn param_ids(&self, group: ParamGroup) -> Vec<ParamId> {
        let i = &self.ids;
        match group {
            ParamGroup::Controller => vec![i.tau1_w, i.tau1_b, i.tau2_w, i.tau2_b, i.std_w, i.std_b],
            ParamGroup::Language => vec![
                i.embedding, i.gru.w_z, i.gru.u_z, i.gru.b_z, i.gru.w_r, i.gru.u_r, i.gru.b_r, i.gru.w_n, i.gru.u_n,
                i.gru.b_n, i.obj_conv, i.dir_maps, i.att_w, i.att_b, i.gate_w, i.gate_b, i.out_wh, i.out_wv, i.out_b,
            ],
        }
    }

    /// The recurrent cell and embedding parameters. The encoder and the
    /// decoder both read exactly these.
    pub fn recurrent_param_ids(&self) -> Vec<ParamId> {
        let g = &self.ids.gru;
        vec![self.ids.embedding, g.w_z, g.u_z, g.b_z, g.w_r, g.u_r, g.b_r, g.w_n, g.u_n, g.b_n]
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        if scene.channels() != self.n_objects {
            return Err(AutodiffError::ShapeMismatch {
                op: "visual-attend",
                detail: format!("scene has {} channels, model expects {}", scene.channels(), self.n_objects),
            }
            .into());
        }
        Ok(())
    }

    fn check_token(&self, t: TokenId) -> Result<()> {
        if t.index() >= self.vocab.len() {
            return Err(Error::UnknownToken { token: format!("#{}", t.0), known: self.vocab.tokens().to_vec() });
        }
        Ok(())
    }

    fn check_state(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.config.hidden {
            return Err(AutodiffError::ShapeMismatch {
                op: "agent-state",
                detail: format!("state has {} entries, model expects {}", h.len(), self.config.hidden),
            }
            .into());
        }
        Ok(())
    }

    fn linear(&self, t: &mut Tape, store: &ParamStore, w: ParamId, b: ParamId, x: Var) -> Result<Var, AutodiffError> {
        let (wv, bv) = (t.param(store, w), t.param(store, b));
        let y = t.matmul(wv, x)?;
        t.add(y, bv)
    }

    /// Object embedding (1×1 convolution over one-hot channels) stacked with
    /// the learned direction maps: `[obj_features + dir_channels, 3, 3]`.
    pub fn scene_features(&self, t: &mut Tape, store: &ParamStore, scene: &Scene) -> Result<Var> {
        self.check_scene(scene)?;
        let grid = t.leaf(scene.grid());
        let k = t.param(store, self.ids.obj_conv);
        let emb = t.spatial_conv(grid, k)?;
        let dirs = t.param(store, self.ids.dir_maps);
        Ok(t.concat(&[emb, dirs], 0)?)
    }

    /// Attention pooling of `features` driven by `h0`: a 1×1 filter generated
    /// from `h0` scores every cell, a softmax over the 9 cells weights the
    /// spatial sum and a sigmoid gate from `h0` masks the pooled vector.
    pub fn visual_attend(&self, t: &mut Tape, store: &ParamStore, features: Var, h0: Var) -> Result<Attended> {
        let a = self.config.visual_dim();
        let filt = self.linear(t, store, self.ids.att_w, self.ids.att_b, h0)?;
        let kernel = t.reshape(filt, &[1, a, 1, 1])?;
        let scores = t.spatial_conv(features, kernel)?;
        let scores = t.reshape(scores, &[CELLS])?;
        let attention = t.softmax(scores, 0)?;
        let flat = t.reshape(features, &[a, CELLS])?;
        let pooled = t.matmul(flat, attention)?;
        let g = self.linear(t, store, self.ids.gate_w, self.ids.gate_b, h0)?;
        let gate = t.sigmoid(g);
        let vector = t.hadamard(pooled, gate)?;
        Ok(Attended { vector, attention, gate })
    }

    /// One GRU step on `[embedding(token); visual]`.
    pub fn rnn_step(&self, t: &mut Tape, store: &ParamStore, token: TokenId, visual: Var, h: Var) -> Result<Var> {
        self.check_token(token)?;
        let table = t.param(store, self.ids.embedding);
        let e = t.embedding(table, token.index())?;
        let x = t.concat(&[e, visual], 0)?;
        let g = &self.ids.gru;
        let gate = |t: &mut Tape, w: ParamId, u: ParamId, b: ParamId| -> Result<(Var, Var), AutodiffError> {
            let wx = self.linear(t, store, w, b, x)?;
            let uv = t.param(store, u);
            let uh = t.matmul(uv, h)?;
            Ok((wx, uh))
        };
        let (zx, zh) = gate(t, g.w_z, g.u_z, g.b_z)?;
        let zs = t.add(zx, zh)?;
        let z = t.sigmoid(zs);
        let (rx, rh) = gate(t, g.w_r, g.u_r, g.b_r)?;
        let rs = t.add(rx, rh)?;
        let r = t.sigmoid(rs);
        let (nx, nh) = gate(t, g.w_n, g.u_n, g.b_n)?;
        let rnh = t.hadamard(r, nh)?;
        let ns = t.add(nx, rnh)?;
        let n = t.tanh(ns);
        let diff = t.sub(h, n)?;
        let zd = t.hadamard(z, diff)?;
        Ok(t.add(n, zd)?)
    }

    /// `W_v·visual + b`, the part of the word logits fixed for a whole sentence.
    fn visual_logits(&self, t: &mut Tape, store: &ParamStore, visual: Var) -> Result<Var> {
        Ok(self.linear(t, store, self.ids.out_wv, self.ids.out_b, visual)?)
    }

    fn word_log_probs(&self, t: &mut Tape, store: &ParamStore, h: Var, vis_logits: Var) -> Result<Var> {
        let wh = t.param(store, self.ids.out_wh);
        let l = t.matmul(wh, h)?;
        let logits = t.add(l, vis_logits)?;
        Ok(t.log_softmax(logits, 0)?)
    }

    /// Runs the RNN from `h0` over `<bos>` and `content`. Returns the final
    /// state and, when `score` is set, `Σ log p(next token)` with `<eos>` as
    /// the last target.
    pub fn run_sentence(
        &self,
        t: &mut Tape,
        store: &ParamStore,
        features: Var,
        h0: Var,
        content: &[TokenId],
        score: bool,
    ) -> Result<(Var, Option<Var>)> {
        let att = self.visual_attend(t, store, features, h0)?;
        let vis_logits = if score { Some(self.visual_logits(t, store, att.vector)?) } else { None };
        let mut h = h0;
        let mut total: Option<Var> = None;
        let inputs = std::iter::once(self.vocab.bos()).chain(content.iter().copied());
        let targets = content.iter().copied().chain(std::iter::once(self.vocab.eos()));
        for (inp, tgt) in inputs.zip(targets) {
            h = self.rnn_step(t, store, inp, att.vector, h)?;
            if let Some(vl) = vis_logits {
                self.check_token(tgt)?;
                let lp = self.word_log_probs(t, store, h, vl)?;
                let pick = t.select(lp, tgt.index())?;
                total = Some(match total {
                    Some(acc) => t.add(acc, pick)?,
                    None => pick,
                });
            }
        }
        Ok((h, total))
    }

    /// Encodes a sentence starting from `state_in`; returns the new `h_last`.
    pub fn encode(&self, store: &ParamStore, sentence: &Utterance, state_in: &AgentState, scene: &Scene) -> Result<AgentState> {
        self.check_state(&state_in.h_last)?;
        let mut t = Tape::new();
        let f = self.scene_features(&mut t, store, scene)?;
        let h0 = t.constant_vec(&state_in.h_last);
        let (h, _) = self.run_sentence(&mut t, store, f, h0, sentence.content(), false)?;
        Ok(AgentState { h_last: t.value(h).to_vec() })
    }

    /// `softmax(W_h·h_i + W_v·V_att(scene, h0) + b)`.
    pub fn word_distribution(&self, store: &ParamStore, h_i: &[f64], scene: &Scene, h0: &[f64]) -> Result<Vec<f64>> {
        self.check_state(h_i)?;
        self.check_state(h0)?;
        let mut t = Tape::new();
        let f = self.scene_features(&mut t, store, scene)?;
        let h0v = t.constant_vec(h0);
        let att = self.visual_attend(&mut t, store, f, h0v)?;
        let vl = self.visual_logits(&mut t, store, att.vector)?;
        let hv = t.constant_vec(h_i);
        let lp = self.word_log_probs(&mut t, store, hv, vl)?;
        Ok(t.value(lp).iter().map(|v| v.exp()).collect())
    }

    /// Teacher-forced `log p(sentence | h_last, scene)`; `tokens` must end in `<eos>`.
    pub fn sentence_log_prob(&self, store: &ParamStore, tokens: &[TokenId], state_in: &AgentState, scene: &Scene) -> Result<f64> {
        let content = match tokens.split_last() {
            Some((&last, content)) if last == self.vocab.eos() => content,
            _ => return Err(Error::Contract("sentence must end with <eos>".into())),
        };
        self.check_state(&state_in.h_last)?;
        let mut t = Tape::new();
        let f = self.scene_features(&mut t, store, scene)?;
        let h0 = t.constant_vec(&state_in.h_last);
        let (_, lp) = self.run_sentence(&mut t, store, f, h0, content, true)?;
        Ok(t.scalar(lp.expect("scored")))
    }

    /// Attention map and gate for a given initial state, for inspection.
    pub fn attention_for(&self, store: &ParamStore, scene: &Scene, h0: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_state(h0)?;
        let mut t = Tape::new();
        let f = self.scene_features(&mut t, store, scene)?;
        let h = t.constant_vec(h0);
        let att = self.visual_attend(&mut t, store, f, h)?;
        Ok((t.value(att.attention).to_vec(), t.value(att.gate).to_vec()))
    }
}

/// A response together with the control that produced it.
#[derive(Clone, Debug)]
pub struct Response {
    pub utterance: Utterance,
    pub control: ControlSample,
}

impl Learner {
    /// Controller then beam-search decoder. With `bypass_controller` the
    /// decoder starts directly from `h_last`.
    pub fn respond<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        state: &AgentState,
        scene: &Scene,
        explore: bool,
        bypass_controller: bool,
        rng: &mut R,
    ) -> Result<Response> {
        let control = if bypass_controller {
            ControlSample::identity(&state.h_last, self.config.min_std)
        } else {
            self.control(store, state, explore, rng)?
        };
        let utterance = self.decode(store, &control.k, scene, self.config.beam_width, self.config.max_len)?;
        Ok(Response { utterance, control })
    }
}

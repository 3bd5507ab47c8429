//! Beam-search decoding from a control vector.

use super::Learner;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Utterance};
use crate::world::Scene;

/// A partial or finished hypothesis; finished ones end in `<eos>`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub finished: bool,
}

struct Live {
    hyp: BeamHypothesis,
    h: Var,
}

impl Learner {
    /// Beam search with the action RNN initialised at `k` and visual
    /// attention computed from `k`. Each of at most `max_len` expansions keeps
    /// the `beam_width` best hypotheses by summed log-probability (ties keep
    /// the earlier candidate). Returns the best finished hypothesis, or the
    /// best unfinished one terminated with `<eos>` when none finished.
    pub fn decode(&self, store: &ParamStore, k: &[f64], scene: &Scene, beam_width: usize, max_len: usize) -> Result<Utterance> {
        let best = self.beam_search(store, k, scene, beam_width, max_len)?;
        Utterance::from_tokens(&self.vocab, best.tokens)
    }

    /// Like [`Learner::decode`] but returns the winning hypothesis with its score.
    pub fn beam_search(&self, store: &ParamStore, k: &[f64], scene: &Scene, beam_width: usize, max_len: usize) -> Result<BeamHypothesis> {
        if beam_width == 0 || max_len == 0 {
            return Err(Error::Contract("beam_width and max_len must be at least 1".into()));
        }
        self.check_state(k)?;
        let eos = self.vocab.eos();
        let mut t = Tape::new();
        let f = self.scene_features(&mut t, store, scene)?;
        let h0 = t.constant_vec(k);
        let att = self.visual_attend(&mut t, store, f, h0)?;
        let vis_logits = self.visual_logits(&mut t, store, att.vector)?;

        let mut beam = vec![Live { hyp: BeamHypothesis { tokens: Vec::new(), score: 0.0, finished: false }, h: h0 }];
        let mut best_finished: Option<BeamHypothesis> = None;
        for _ in 0..max_len {
            if beam.iter().all(|l| l.hyp.finished) {
                break;
            }
            let mut candidates: Vec<Live> = Vec::new();
            for live in beam {
                if live.hyp.finished {
                    candidates.push(live);
                    continue;
                }
                let input = live.hyp.tokens.last().copied().unwrap_or(self.vocab.bos());
                let h = self.rnn_step(&mut t, store, input, att.vector, live.h)?;
                let lp = self.word_log_probs(&mut t, store, h, vis_logits)?;
                for (i, &p) in t.value(lp).iter().enumerate() {
                    let tok = TokenId(i as u32);
                    let mut tokens = live.hyp.tokens.clone();
                    tokens.push(tok);
                    let finished = tok == eos;
                    candidates.push(Live { hyp: BeamHypothesis { tokens, score: live.hyp.score + p, finished }, h });
                }
            }
            candidates.sort_by(|a, b| b.hyp.score.total_cmp(&a.hyp.score));
            candidates.truncate(beam_width);
            for c in candidates.iter().filter(|c| c.hyp.finished) {
                if best_finished.as_ref().is_none_or(|b| c.hyp.score > b.score) {
                    best_finished = Some(c.hyp.clone());
                }
            }
            beam = candidates;
        }
        if let Some(b) = best_finished {
            return Ok(b);
        }
        let mut top = beam.into_iter().next().expect("beam is never empty").hyp;
        top.tokens.push(eos);
        top.finished = true;
        Ok(top)
    }
}

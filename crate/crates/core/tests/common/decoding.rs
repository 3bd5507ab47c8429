//! Beam search against a step-by-step greedy decoder and against brute-force
//! enumeration.

use lingo_core::autodiff::{ParamStore, Tape, Tensor};
use lingo_core::learner::{AgentState, Learner, ModelConfig};
use lingo_core::vocab::{TokenId, Vocabulary};
use lingo_core::world::{render_scene, sample_world, Lexicon, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(init_scale: f64) -> ModelConfig {
    ModelConfig { hidden: 12, embed: 6, obj_features: 4, dir_channels: 3, init_scale, ..ModelConfig::default() }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Feeds back the most probable word at every step, first index on ties,
/// closing with `<eos>` when `max_len` steps pass without one.
pub fn greedy(l: &Learner, store: &ParamStore, k: &[f64], scene: &Scene, max_len: usize) -> Vec<TokenId> {
    let mut t = Tape::new();
    let f = l.scene_features(&mut t, store, scene).unwrap();
    let h0 = t.constant_vec(k);
    let att = l.visual_attend(&mut t, store, f, h0).unwrap();
    let (mut h, mut input, mut out) = (h0, l.vocab().bos(), Vec::new());
    for _ in 0..max_len {
        h = l.rnn_step(&mut t, store, input, att.vector, h).unwrap();
        let p = l.word_distribution(store, t.value(h), scene, k).unwrap();
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        let tok = TokenId(best as u32);
        out.push(tok);
        if tok == l.vocab().eos() {
            return out;
        }
        input = tok;
    }
    out.push(l.vocab().eos());
    out
}

/// Seeds among `n_states` seeded states where width-1 beam search and
/// greedy decoding disagree.
pub fn beam_one_vs_greedy(n_states: u64) -> Vec<u64> {
    let lexicon = Lexicon::default();
    let vocab = Vocabulary::grounded(lexicon.names()).unwrap();
    let mut mismatches = Vec::new();
    let models_every = 20;
    let mut model: Option<(Learner, ParamStore, ChaCha8Rng)> = None;
    for s in 0..n_states {
        if s % models_every == 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut store = ParamStore::new();
            let l = Learner::new(config(0.6), vocab.clone(), lexicon.len(), &mut store, &mut rng).unwrap();
            model = Some((l, store, rng));
        }
        let (l, store, rng) = model.as_mut().unwrap();
        let world = sample_world(&lexicon.ids(), rng).unwrap();
        let scene = render_scene(&world, lexicon.len());
        let k = random_state(rng, l.hidden());
        let max_len = l.config().max_len;
        let got = l.beam_search(store, &k, &scene, 1, max_len).unwrap();
        if got.tokens != greedy(l, store, &k, &scene, max_len) {
            mismatches.push(s);
        }
    }
    mismatches
}

/// Seeds where a wide beam misses the highest-probability sentence of a
/// vocabulary with two content tokens plus end-of-sentence, found by
/// enumerating every sentence of fewer than `max_len` words.
pub fn exhaustive_micro(n_models: u64, max_len: usize) -> Vec<u64> {
    let vocab = Vocabulary::from_words::<&str>(&[]).unwrap();
    assert_eq!(vocab.len(), 3);
    let eos = vocab.eos();
    let content: Vec<TokenId> = (0..3).map(|i| TokenId(i as u32)).filter(|t| *t != eos).collect();
    let mut failures = Vec::new();
    for seed in 0..n_models {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut store = ParamStore::new();
        let l = Learner::new(config(1.5), vocab.clone(), 1, &mut store, &mut rng).unwrap();
        let cell = rng.random_range(0..9);
        let mut grid = vec![0.0; 9];
        grid[cell] = 1.0;
        let scene = Scene::from_grid(Tensor::from_vec(&[1, 3, 3], grid).unwrap()).unwrap();
        let k = random_state(&mut rng, l.hidden());
        let state = AgentState { h_last: k.clone() };

        let mut best: Option<(f64, Vec<TokenId>)> = None;
        for len in 0..max_len {
            for code in 0..content.len().pow(len as u32) {
                let mut toks: Vec<TokenId> = (0..len).map(|i| content[(code / content.len().pow(i as u32)) % content.len()]).collect();
                toks.push(eos);
                let lp = l.sentence_log_prob(&store, &toks, &state, &scene).unwrap();
                if best.as_ref().is_none_or(|(b, _)| lp > *b) {
                    best = Some((lp, toks));
                }
            }
        }
        let (best_lp, best_toks) = best.unwrap();
        // Wide enough to keep every prefix alive at every depth.
        let width = (content.len() + 1).pow(max_len as u32);
        let got = l.beam_search(&store, &k, &scene, width, max_len).unwrap();
        if !got.finished || got.tokens != best_toks || (got.score - best_lp).abs() > 1e-10 {
            failures.push(seed);
        }
    }
    failures
}

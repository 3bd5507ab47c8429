//! Split-run and checkpoint round-trip comparisons.

use lingo_core::checkpoint::{encode_trainer, load, save};
use lingo_core::config::ExperimentConfig;
use lingo_core::evaluation::make_baseline_agent;
use lingo_core::training::Trainer;

fn trained(cfg: &ExperimentConfig, sessions: u64) -> Trainer {
    let mut t = make_baseline_agent(cfg.train.kind, cfg).unwrap();
    t.run(sessions, |_| Ok(())).unwrap();
    t
}

/// Parameters whose bits differ between two trainers, by name.
pub fn differing_params(a: &Trainer, b: &Trainer) -> Vec<String> {
    a.store()
        .iter()
        .zip(b.store().iter())
        .filter(|((_, _, x), (_, _, y))| {
            x.shape() != y.shape() || x.data().iter().zip(y.data()).any(|(p, q)| p.to_bits() != q.to_bits())
        })
        .map(|((_, name, _), _)| name.to_string())
        .collect()
}

/// Trains `first` sessions, saves, reloads and trains `second` more; compares
/// with `first + second` sessions in one go. Returns the differences found.
pub fn split_vs_straight(cfg: &ExperimentConfig, first: u64, second: u64) -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.ckpt");
    let straight = trained(cfg, first + second);
    save(&trained(cfg, first), cfg, &path).unwrap();
    let (mut resumed, cfg_back) = load(&path).unwrap();
    resumed.run(second, |_| Ok(())).unwrap();
    let mut diffs = differing_params(&resumed, &straight);
    if encode_trainer(&resumed, &cfg_back).unwrap() != encode_trainer(&straight, cfg).unwrap() {
        diffs.push("encoded trainer state".into());
    }
    diffs
}

/// Saves and reloads a trainer; returns the differences found.
pub fn round_trip(cfg: &ExperimentConfig, sessions: u64) -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("round.ckpt");
    let t = trained(cfg, sessions);
    save(&t, cfg, &path).unwrap();
    let (back, cfg_back) = load(&path).unwrap();
    let mut diffs = differing_params(&t, &back);
    if &cfg_back != cfg {
        diffs.push("configuration".into());
    }
    if encode_trainer(&back, &cfg_back).unwrap() != encode_trainer(&t, cfg).unwrap() {
        diffs.push("encoded trainer state".into());
    }
    diffs
}

use lingo_core::checkpoint::{decode_trainer, encode_trainer, load, save, MAGIC};
use lingo_core::config::ExperimentConfig;
use lingo_core::evaluation::make_baseline_agent;
use lingo_core::learner::ModelConfig;
use lingo_core::training::{BaselineKind, Trainer};
use lingo_core::Error;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        model: ModelConfig { hidden: 8, embed: 6, obj_features: 4, dir_channels: 2, ..ModelConfig::default() },
        ..ExperimentConfig::default()
    };
    cfg.train.batch_size = 4;
    cfg.train.value_width = 6;
    cfg.train.target_sync_period = 3;
    cfg.train.replay_capacity = 20;
    cfg.seed = 11;
    cfg
}

fn trained(cfg: &ExperimentConfig, sessions: u64) -> Trainer {
    let mut t = make_baseline_agent(cfg.train.kind, cfg).unwrap();
    t.run(sessions, |_| Ok(())).unwrap();
    t
}

#[test]
fn round_trip_is_bitwise() {
    let cfg = small_config();
    let t = trained(&cfg, 12);
    let bytes = encode_trainer(&t, &cfg).unwrap();
    let (back, cfg_back) = decode_trainer(&bytes).unwrap();
    assert_eq!(cfg_back, cfg);
    assert_eq!(encode_trainer(&back, &cfg_back).unwrap(), bytes);
    for ((_, name, a), (_, _, b)) in t.store().iter().zip(back.store().iter()) {
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{name} differs");
    }
    assert_eq!(back.sessions(), t.sessions());
    assert_eq!(back.updates(), t.updates());
    assert_eq!(back.value().sync_count(), t.value().sync_count());
    assert_eq!(back.replay().len(), t.replay().len());
}

#[test]
fn split_run_equals_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt").join("state.ckpt");
    for kind in BaselineKind::ALL {
        let mut cfg = small_config();
        cfg.train.kind = kind;
        let straight = trained(&cfg, 20);

        let half = trained(&cfg, 10);
        save(&half, &cfg, &path).unwrap();
        let (mut resumed, cfg2) = load(&path).unwrap();
        resumed.run(10, |_| Ok(())).unwrap();

        assert_eq!(encode_trainer(&resumed, &cfg2).unwrap(), encode_trainer(&straight, &cfg).unwrap(), "{}", kind.name());
    }
}

#[test]
fn unsupported_version_is_refused() {
    let cfg = small_config();
    let mut bytes = encode_trainer(&trained(&cfg, 2), &cfg).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    bytes[8] ^= 0xff;
    match decode_trainer(&bytes) {
        Err(Error::CheckpointVersion { expected: 1, .. }) => {}
        other => panic!("expected a version error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn truncated_or_corrupted_files_fail() {
    let cfg = small_config();
    let bytes = encode_trainer(&trained(&cfg, 5), &cfg).unwrap();
    let truncated = &bytes[..bytes.len() - 100];
    assert!(matches!(decode_trainer(truncated), Err(Error::Checkpoint(_))));
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(decode_trainer(&flipped), Err(Error::Checkpoint(_))));
    assert!(matches!(decode_trainer(b"not a checkpoint"), Err(Error::Checkpoint(_))));
}

#[test]
fn save_replaces_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let cfg = small_config();
    save(&trained(&cfg, 1), &cfg, &path).unwrap();
    save(&trained(&cfg, 3), &cfg, &path).unwrap();
    let (t, _) = load(&path).unwrap();
    assert_eq!(t.sessions(), 3);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn missing_file_is_a_checkpoint_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load(&dir.path().join("none.ckpt")), Err(Error::Checkpoint(_))));
}

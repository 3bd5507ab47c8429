use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use lingo_core::checkpoint::{encode_trainer, load};

fn lingo() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lingo"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("LINGO_")) {
        c.env_remove(k);
    }
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    lingo().args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small, fast experiment writing into `dir`.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    let text = format!(
        "seed = 7\n{extra}\n\
         [model]\nhidden = 8\nembed = 6\nobj_features = 4\ndir_channels = 2\n\
         [train]\nbatch_size = 4\nvalue_width = 6\nreplay_capacity = 50\nmax_train_sessions = 20\n\
         [eval]\nn_sessions = 20\n\
         [paths]\ncheckpoint_dir = \"{0}/ckpt\"\nmetrics_log = \"{0}/metrics.jsonl\"\ncheckpoint_every = 10\n",
        dir.display()
    );
    fs::write(&path, text).unwrap();
    path
}

fn train(dir: &Path, config: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    args.push("train");
    let o = run(&args, dir);
    assert!(o.status.success(), "{}", stderr(&o));
    PathBuf::from(stdout(&o).trim())
}

#[test]
fn malformed_config_exits_2_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlr = \"fast\"\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "train"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("lr"), "{}", stderr(&o));
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("bad.toml")]);

    let o = run(&["--set", "train.batch_size=0", "train"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn missing_command_and_unknown_key_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&[], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["--set", "train.no_such_key=1", "eval", "--oracle"], dir.path()).status.code(), Some(2));
}

#[test]
fn print_effective_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--set", "train.lr=0.5", "--print-effective-config"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("lr = 0.5"), "{text}");
    let path = dir.path().join("effective.toml");
    fs::write(&path, &text).unwrap();
    let again = run(&["--config", path.to_str().unwrap(), "--print-effective-config"], dir.path());
    assert_eq!(stdout(&again), text);
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let o = lingo().args(["--print-effective-config"]).env("LINGO_TRAIN__BATCH_SIZE", "5").current_dir(dir.path()).output().unwrap();
    assert!(stdout(&o).contains("batch_size = 5"), "{}", stdout(&o));
}

#[test]
fn same_seed_gives_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let cfg = write_config(d.path(), "");
        train(d.path(), &cfg, &[]);
    }
    let la = fs::read_to_string(a.path().join("metrics.jsonl")).unwrap();
    let lb = fs::read_to_string(b.path().join("metrics.jsonl")).unwrap();
    assert!(!la.is_empty());
    assert_eq!(la, lb);
}

#[test]
fn resumed_run_matches_straight_run() {
    let straight = tempfile::tempdir().unwrap();
    let cfg = write_config(straight.path(), "");
    let ckpt = train(straight.path(), &cfg, &[]);
    let full_log = fs::read_to_string(straight.path().join("metrics.jsonl")).unwrap();
    let (full, full_cfg) = load(&ckpt).unwrap();

    let split = tempfile::tempdir().unwrap();
    let cfg = write_config(split.path(), "");
    let ckpt = train(split.path(), &cfg, &["--set", "train.max_train_sessions=10"]);
    let resumed = train(split.path(), &cfg, &["--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(split.path().join("metrics.jsonl")).unwrap(), full_log);
    // The stored configs differ only in their output paths.
    let (split_trainer, mut split_cfg) = load(&resumed).unwrap();
    split_cfg.paths = full_cfg.paths.clone();
    assert_eq!(encode_trainer(&split_trainer, &split_cfg).unwrap(), encode_trainer(&full, &full_cfg).unwrap());
}

#[test]
fn incompatible_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let ckpt = train(dir.path(), &cfg, &[]);
    let o = run(&["--config", cfg.to_str().unwrap(), "--set", "model.hidden=9", "--checkpoint", ckpt.to_str().unwrap(), "train"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
}

#[test]
fn oracle_eval_prints_full_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    for configuration in ["mixed", "held_out"] {
        let o = run(
            &["--set", "activity.setting=\"compositional_generalization\"", "eval", "--oracle", "--n-sessions", "50", "--configuration", configuration],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("accuracy 1.0000"), "{}", stdout(&o));
    }
}

#[test]
fn eval_is_repeatable_and_checks_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let ckpt = train(dir.path(), &cfg, &[]);
    let ck = ckpt.to_str().unwrap();
    let reports: Vec<String> = ["a.json", "b.json"]
        .iter()
        .map(|name| {
            let path = dir.path().join(name);
            let o = run(&["--checkpoint", ck, "eval", "--n-sessions", "30", "--report", path.to_str().unwrap()], dir.path());
            assert!(o.status.success(), "{}", stderr(&o));
            fs::read_to_string(path).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);

    let o = run(&["--checkpoint", ck, "eval", "--configuration", "held_out"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&["--checkpoint", dir.path().join("missing.ckpt").to_str().unwrap(), "eval"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

fn chat(dir: &Path, ckpt: &Path, input: &str) -> Output {
    let mut child = lingo()
        .args(["--checkpoint", ckpt.to_str().unwrap(), "chat", "--world", "north=apple,south=banana,east=avocado,west=orange"])
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn chat_help_vocabulary_and_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let ckpt = train(dir.path(), &cfg, &[]);
    let o = chat(dir.path(), &ckpt, "\nwhat is on the moon\nwhat is on the east\n.\n+1\n:quit\n");
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.matches("commands:").count() >= 2, "{out}");
    assert!(out.contains("moon") && out.contains("apple avocado banana"), "{out}");
    assert_eq!(out.matches("learner:").count(), 2, "{out}");
    assert!(out.contains("avocado"), "{out}");
    let transcript = fs::read_to_string(dir.path().join("chat_transcript.jsonl")).unwrap();
    assert_eq!(transcript.lines().count(), 2);
}

#[test]
fn inspect_attention_writes_one_record_per_response() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let ckpt = train(dir.path(), &cfg, &[]);
    let dialogue = dir.path().join("dialogue.txt");
    fs::write(&dialogue, "# two sessions\nworld north=apple south=banana east=avocado west=strawberry\nwhere is strawberry\n.\n\nworld north=cherry,south=apple,east=orange,west=cabbage\nwhat is on the north\n").unwrap();
    let out = dir.path().join("attention.jsonl");
    let o = run(
        &["--checkpoint", ckpt.to_str().unwrap(), "inspect-attention", "--dialogue", dialogue.to_str().unwrap(), "--output", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let records: Vec<serde_json::Value> = fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    for r in &records {
        let rows = r["attention"].as_array().unwrap();
        assert_eq!(rows.len(), 3);
        let total: f64 = rows.iter().flat_map(|row| row.as_array().unwrap()).map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    fs::write(&dialogue, "world north=apple south=banana east=avocado west=strawberry\nwhere is strawberry\nwhere is the moon\n").unwrap();
    let o = run(&["--checkpoint", ckpt.to_str().unwrap(), "inspect-attention", "--dialogue", dialogue.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn plot_writes_svg_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let ckpt = train(dir.path(), &cfg, &[]);
    let report = dir.path().join("report.json");
    let o = run(&["--checkpoint", ckpt.to_str().unwrap(), "eval", "--n-sessions", "10", "--report", report.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = format!("joint={}", dir.path().join("metrics.jsonl").display());
    let plots = dir.path().join("plots");
    let o = run(
        &["plot", "--metrics", &metrics, "--window", "5", "--reports", report.to_str().unwrap(), "--out-dir", plots.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["reward.svg", "accuracy.svg"] {
        let svg = fs::read_to_string(plots.join(name)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("</svg>"), "{name}");
    }
    assert!(fs::read_to_string(plots.join("reward.svg")).unwrap().contains("joint"));
}

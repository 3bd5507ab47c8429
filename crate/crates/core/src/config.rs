//! Experiment configuration: one TOML document covering every knob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::ModelConfig;
use crate::teacher::{build_activity_config, ActivityConfig, Setting};
use crate::training::TrainConfig;
use crate::world::{Direction, Lexicon, DEFAULT_OBJECTS};

/// Prefix of environment variables that override config keys;
/// `LINGO_TRAIN__LR=0.1` sets `train.lr`.
pub const ENV_PREFIX: &str = "LINGO_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Interactions per session.
    pub max_steps: usize,
    pub objects: Vec<String>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { max_steps: 3, objects: DEFAULT_OBJECTS.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub object: String,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivitySection {
    pub setting: Setting,
    /// Share of pairs or objects sampled as inactive when no explicit list is given.
    pub fraction_inactive: f64,
    pub seed: u64,
    pub inactive_qa_pairs: Option<Vec<PairEntry>>,
    pub inactive_qa_objects: Option<Vec<String>>,
}

impl Default for ActivitySection {
    fn default() -> Self {
        Self { setting: Setting::Standard, fraction_inactive: 0.25, seed: 0, inactive_qa_pairs: None, inactive_qa_objects: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_sessions: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_sessions: 1000, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub checkpoint_dir: PathBuf,
    pub metrics_log: PathBuf,
    /// Sessions between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { checkpoint_dir: "runs/checkpoints".into(), metrics_log: "runs/metrics.jsonl".into(), checkpoint_every: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub activity: ActivitySection,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            env: EnvConfig::default(),
            activity: ActivitySection::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// Applies `(dotted.key, value)` overrides, creating missing tables.
    pub fn with_overrides<I, K, V>(&self, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut root = toml::Value::try_from(self).map_err(config_err)?;
        for (key, raw) in overrides {
            let key = key.as_ref();
            let path: Vec<&str> = key.split('.').collect();
            if path.iter().any(|p| p.is_empty()) {
                return Err(Error::Config(format!("malformed override key {key:?}")));
            }
            let mut node = &mut root;
            for part in &path[..path.len() - 1] {
                let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("{key}: {part} is not a table")))?;
                node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
            }
            let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("{key}: parent is not a table")))?;
            table.insert(path[path.len() - 1].to_string(), parse_literal(raw.as_ref()));
        }
        let cfg: Self = root.try_into().map_err(|e| Error::Config(format!("override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Collects `LINGO_SECTION__KEY=value` pairs as `section.key` overrides.
    pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_lowercase().replace("__", "."), v)))
            .collect();
        out.sort();
        out
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        Lexicon::new(&self.env.objects)
    }

    /// Explicit inactive lists win over sampling.
    pub fn activity_config(&self) -> Result<ActivityConfig> {
        let lexicon = self.lexicon()?;
        let a = &self.activity;
        let mut cfg = build_activity_config(a.setting, &lexicon, a.fraction_inactive, a.seed)?;
        let obj = |n: &str| lexicon.id(n).ok_or_else(|| Error::Config(format!("activity: unknown object {n:?}")));
        if let Some(pairs) = &a.inactive_qa_pairs {
            cfg.inactive_qa_pairs = pairs.iter().map(|p| Ok((obj(&p.object)?, p.direction))).collect::<Result<_>>()?;
        }
        if let Some(objects) = &a.inactive_qa_objects {
            cfg.inactive_qa_objects = objects.iter().map(|n| obj(n)).collect::<Result<_>>()?;
        }
        cfg.validate(&lexicon)?;
        Ok(cfg)
    }

    /// Field-level checks; the message names the offending key.
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
        self.train.validate()?;
        if self.env.max_steps == 0 {
            return Err(Error::Config("env.max_steps: must be at least 1".into()));
        }
        let lexicon = self.lexicon().map_err(|e| Error::Config(format!("env.objects: {e}")))?;
        if lexicon.len() < 4 {
            return Err(Error::Config(format!("env.objects: need at least 4 objects, got {}", lexicon.len())));
        }
        crate::vocab::Vocabulary::grounded(lexicon.names()).map_err(|e| Error::Config(format!("env.objects: {e}")))?;
        self.activity_config().map_err(|e| Error::Config(format!("activity: {e}")))?;
        if self.eval.n_sessions == 0 {
            return Err(Error::Config("eval.n_sessions: must be at least 1".into()));
        }
        Ok(())
    }
}

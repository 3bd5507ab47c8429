//! Versioned binary checkpoints of the full training state.
//!
//! Layout: magic, `u32` version, `u64` manifest length, JSON manifest, raw
//! little-endian `f64` blob, SHA-256 of everything before it. Tensors are
//! stored bit for bit; the manifest holds counters, generator states and
//! the experiment config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::session::TurnRecord;
use crate::training::{ReplayBuffer, Trainer, Transition};
use crate::vocab::TokenId;
use crate::world::{ObjectId, WorldState};

pub const MAGIC: &[u8; 8] = b"LNGCKPT\0";
pub const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn of(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Checkpoint("malformed generator state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ReplayItem {
    placement: [usize; 4],
    episode_seed: u64,
    step_index: usize,
    teacher: Vec<u32>,
    response: Vec<u32>,
    feedback: Vec<u32>,
    reward: f64,
    next_teacher: Option<Vec<u32>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ReplayMeta {
    capacity: usize,
    head: usize,
    rng: RngState,
    items: Vec<ReplayItem>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Meta {
    config: String,
    sessions: u64,
    updates: u64,
    target_syncs: u64,
    rng: RngState,
    replay: ReplayMeta,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    meta: Meta,
    entries: Vec<Entry>,
}

#[derive(Default)]
struct BlobWriter {
    entries: Vec<Entry>,
    data: Vec<f64>,
}

impl BlobWriter {
    fn put(&mut self, name: impl Into<String>, shape: &[usize], values: &[f64]) {
        self.entries.push(Entry { name: name.into(), shape: shape.to_vec(), offset: self.data.len(), len: values.len() });
        self.data.extend_from_slice(values);
    }
}

struct BlobReader<'a> {
    entries: &'a [Entry],
    data: Vec<f64>,
}

impl BlobReader<'_> {
    fn get(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if e.shape != shape {
            return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, the model expects {shape:?}", e.shape)));
        }
        self.data
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} lies outside the data section")))
    }
}

fn token_ids(v: &[TokenId]) -> Vec<u32> {
    v.iter().map(|t| t.0).collect()
}

fn tokens(v: &[u32]) -> Vec<TokenId> {
    v.iter().map(|&t| TokenId(t)).collect()
}

/// Serializes the complete trainer state.
pub fn encode_trainer(trainer: &Trainer, config: &ExperimentConfig) -> Result<Vec<u8>> {
    let mut blob = BlobWriter::default();
    for (id, name, t) in trainer.store.iter() {
        blob.put(format!("param/{name}"), t.shape(), t.data());
        blob.put(format!("adagrad/{name}"), t.shape(), &trainer.optimizer.accumulators()[id.index()]);
    }
    for (i, t) in trainer.value.target().iter().enumerate() {
        blob.put(format!("value_target/{i}"), &[t.len()], t);
    }
    let items = trainer.replay.items();
    let h = trainer.learner.hidden();
    let prior: Vec<f64> = items.iter().flat_map(|t| t.turn.prior_h.iter().copied()).collect();
    let k: Vec<f64> = items.iter().flat_map(|t| t.turn.k.iter().copied()).collect();
    let noise: Vec<f64> = items.iter().flat_map(|t| t.turn.noise.iter().copied()).collect();
    blob.put("replay/prior_h", &[items.len(), h], &prior);
    blob.put("replay/k", &[items.len(), h], &k);
    blob.put("replay/noise", &[items.len(), h], &noise);

    let meta = Meta {
        config: config.to_toml_string(),
        sessions: trainer.sessions,
        updates: trainer.updates,
        target_syncs: trainer.value.sync_count(),
        rng: RngState::of(&trainer.rng),
        replay: ReplayMeta {
            capacity: trainer.replay.capacity(),
            head: trainer.replay.head(),
            rng: RngState::of(trainer.replay.rng()),
            items: items
                .iter()
                .map(|t| ReplayItem {
                    placement: crate::world::Direction::ALL.map(|d| t.world.object_at(d).0),
                    episode_seed: t.world.episode_seed,
                    step_index: t.turn.step_index,
                    teacher: token_ids(&t.turn.teacher),
                    response: token_ids(&t.turn.response),
                    feedback: token_ids(&t.turn.feedback),
                    reward: t.turn.reward,
                    next_teacher: t.next_teacher.as_deref().map(token_ids),
                })
                .collect(),
        },
    };
    let manifest = serde_json::to_vec(&Manifest { meta, entries: blob.entries })?;
    let mut out = Vec::with_capacity(HEADER + manifest.len() + blob.data.len() * 8 + DIGEST);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for v in &blob.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Rebuilds a trainer. The config embedded in the checkpoint is used.
pub fn decode_trainer(bytes: &[u8]) -> Result<(Trainer, ExperimentConfig)> {
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: VERSION });
    }
    if bytes.len() < HEADER + DIGEST {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch: file is truncated or corrupted".into()));
    }
    let mlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let data_start = HEADER.checked_add(mlen).filter(|&e| e <= body.len()).ok_or_else(|| Error::Checkpoint("bad manifest length".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&body[HEADER..data_start]).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    let raw = &body[data_start..];
    if raw.len() % 8 != 0 {
        return Err(Error::Checkpoint("data section is not a whole number of values".into()));
    }
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let blob = BlobReader { entries: &manifest.entries, data };
    let meta = manifest.meta;

    let config = ExperimentConfig::from_toml_str(&meta.config).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let mut trainer = Trainer::new(
        config.model.clone(),
        config.train.clone(),
        config.lexicon()?,
        config.activity_config()?,
        config.env.max_steps,
        config.seed,
    )?;
    let ids: Vec<_> = trainer.store.ids().collect();
    let mut acc = Vec::with_capacity(ids.len());
    for id in ids {
        let name = trainer.store.name(id).to_string();
        let shape = trainer.store.get(id).shape().to_vec();
        let p = blob.get(&format!("param/{name}"), &shape)?.to_vec();
        trainer.store.assign(id, &p)?;
        acc.push(blob.get(&format!("adagrad/{name}"), &shape)?.to_vec());
    }
    trainer.optimizer.set_accumulators(acc)?;
    let target = (0..trainer.value.target().len())
        .map(|i| {
            let n = trainer.value.target()[i].len();
            blob.get(&format!("value_target/{i}"), &[n]).map(<[f64]>::to_vec)
        })
        .collect::<Result<Vec<_>>>()?;
    trainer.value.set_target(target, meta.target_syncs)?;

    let h = trainer.learner.hidden();
    let n = meta.replay.items.len();
    let prior = blob.get("replay/prior_h", &[n, h])?;
    let ks = blob.get("replay/k", &[n, h])?;
    let noise = blob.get("replay/noise", &[n, h])?;
    let n_obj = trainer.learner.n_objects();
    let items = meta
        .replay
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            if it.placement.iter().any(|&o| o >= n_obj) {
                return Err(Error::Checkpoint("replayed world references an unknown object".into()));
            }
            let world = WorldState::new(it.placement.map(ObjectId), it.episode_seed)?;
            Ok(Transition {
                world,
                turn: TurnRecord {
                    step_index: it.step_index,
                    prior_h: prior[i * h..(i + 1) * h].to_vec(),
                    teacher: tokens(&it.teacher),
                    response: tokens(&it.response),
                    k: ks[i * h..(i + 1) * h].to_vec(),
                    noise: noise[i * h..(i + 1) * h].to_vec(),
                    feedback: tokens(&it.feedback),
                    reward: it.reward,
                },
                next_teacher: it.next_teacher.as_deref().map(tokens),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if meta.replay.capacity == 0 || items.len() > meta.replay.capacity || meta.replay.head >= meta.replay.capacity {
        return Err(Error::Checkpoint("inconsistent replay buffer layout".into()));
    }
    trainer.replay = ReplayBuffer::from_parts(meta.replay.capacity, items, meta.replay.head, meta.replay.rng.restore()?);
    trainer.rng = meta.rng.restore()?;
    trainer.sessions = meta.sessions;
    trainer.updates = meta.updates;
    Ok((trainer, config))
}

/// Writes atomically: a sibling temporary file is renamed into place.
pub fn save(trainer: &Trainer, config: &ExperimentConfig, path: &Path) -> Result<()> {
    let bytes = encode_trainer(trainer, config)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp: PathBuf = path.to_path_buf();
    tmp.set_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Trainer, ExperimentConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_trainer(&bytes)
}

//! Checkpoint directory layout:
//!
//! ```text
//! manifest.txt              one line per blob: kind, name, shape, offset, bytes, sha256
//! config.toml               resolved run configuration
//! state.json                step, noise stream, sampler position, optimizer step counts
//! params/NAME.f32           little-endian f32, one file per parameter
//! optimizer/GROUP/m/NAME.f32, optimizer/GROUP/v/NAME.f32
//! ```
//!
//! Offsets are positions in the concatenation of all blobs in manifest order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use autograd::{AdamState, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::step::TrainState;
use crate::config::TrainConfig;
use crate::data::SamplerState;
use crate::error::{io_err, Error, Result};

pub const CHECKPOINT_MANIFEST: &str = "manifest.txt";

#[derive(Serialize, Deserialize)]
struct StateFile {
    step: u64,
    rng: ChaCha8Rng,
    sampler: SamplerState,
    optimizer_steps: BTreeMap<String, u64>,
}

fn blob_bytes(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

struct Writer {
    root: PathBuf,
    manifest: String,
    offset: usize,
}

impl Writer {
    fn blob(&mut self, kind: &str, name: &str, rel: &str, t: &Tensor<f32>) -> Result<()> {
        let bytes = blob_bytes(t);
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        let _ = writeln!(
            self.manifest,
            "{kind} {name} shape={} offset={} bytes={} sha256={} file={rel}",
            shape_str(t.shape()),
            self.offset,
            bytes.len(),
            sha_hex(&bytes)
        );
        self.offset += bytes.len();
        Ok(())
    }
}

/// Writes a complete checkpoint into `dir`, replacing any previous one.
pub fn save_checkpoint(state: &TrainState<f32>, config: &TrainConfig, sampler: SamplerState, dir: &Path) -> Result<()> {
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
    let mut w = Writer {
        root: tmp.clone(),
        manifest: String::from("# name shape byte-offset size checksum\n"),
        offset: 0,
    };
    let params = state.model.params();
    for (_, name, t) in params.iter() {
        w.blob("param", name, &format!("params/{name}.f32"), t)?;
    }
    for (alias, target) in params.aliases() {
        let _ = writeln!(w.manifest, "alias {alias} -> {target}");
    }
    let mut optimizer_steps = BTreeMap::new();
    for (group, opt) in state.optimizer_states() {
        let st = opt.state();
        optimizer_steps.insert(group.to_string(), st.step);
        for (k, &id) in opt.params().iter().enumerate() {
            let name = params.name(id);
            w.blob("adam_m", &format!("{group}/{name}"), &format!("optimizer/{group}/m/{name}.f32"), &st.first_moment[k])?;
            w.blob("adam_v", &format!("{group}/{name}"), &format!("optimizer/{group}/v/{name}.f32"), &st.second_moment[k])?;
        }
    }
    let manifest_path = tmp.join(CHECKPOINT_MANIFEST);
    fs::write(&manifest_path, &w.manifest).map_err(io_err(&manifest_path))?;
    let cfg_path = tmp.join("config.toml");
    fs::write(&cfg_path, config.to_kv_string()).map_err(io_err(&cfg_path))?;
    let state_file = StateFile {
        step: state.step,
        rng: state.rng.clone(),
        sampler,
        optimizer_steps,
    };
    let json = serde_json::to_string_pretty(&state_file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let state_path = tmp.join("state.json");
    fs::write(&state_path, json).map_err(io_err(&state_path))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::rename(&tmp, dir).map_err(io_err(dir))
}

struct Entry {
    kind: String,
    name: String,
    shape: Vec<usize>,
    sha: String,
    file: String,
}

fn parse_manifest(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("alias ") || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap_or_default().to_string();
        let name = parts
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("malformed manifest line `{line}`")))?
            .to_string();
        let mut fields = BTreeMap::new();
        for p in parts {
            if let Some((k, v)) = p.split_once('=') {
                fields.insert(k, v);
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(|s| s.to_string())
                .ok_or_else(|| Error::Checkpoint(format!("manifest entry {name} lacks `{k}`")))
        };
        let shape = get("shape")?
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Checkpoint(format!("bad shape for {name}")))?;
        out.push(Entry {
            sha: get("sha256")?,
            file: get("file")?,
            kind,
            name,
            shape,
        });
    }
    Ok(out)
}

fn read_blob(dir: &Path, e: &Entry) -> Result<Tensor<f32>> {
    let path = dir.join(&e.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    if sha_hex(&bytes) != e.sha {
        return Err(Error::Checkpoint(format!("checksum mismatch for {}", e.name)));
    }
    let numel: usize = e.shape.iter().product();
    if bytes.len() != numel * 4 {
        return Err(Error::Checkpoint(format!("{} has {} bytes, expected {}", e.name, bytes.len(), numel * 4)));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::new(&e.shape, data))
}

/// Restores the configuration, training state and sampler position.
pub fn load_checkpoint(dir: &Path) -> Result<(TrainConfig, TrainState<f32>, SamplerState)> {
    let cfg_path = dir.join("config.toml");
    let text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
    let config = TrainConfig::from_kv_str(&text)?;
    let mut state = TrainState::<f32>::new(&config)?;

    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let manifest = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let entries = parse_manifest(&manifest)?;

    let state_path = dir.join("state.json");
    let json = fs::read_to_string(&state_path).map_err(io_err(&state_path))?;
    let sf: StateFile = serde_json::from_str(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut loaded = 0;
    for e in entries.iter().filter(|e| e.kind == "param") {
        let id = state
            .model
            .params()
            .resolve(&e.name)
            .map_err(|_| Error::Checkpoint(format!("unknown parameter {}", e.name)))?;
        let t = read_blob(dir, e)?;
        let slot = state.model.params_mut().get_mut(id);
        if slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", e.name)));
        }
        *slot = t;
        loaded += 1;
    }
    if loaded != state.model.params().len() {
        return Err(Error::Checkpoint(format!(
            "{loaded} parameters stored, model has {}",
            state.model.params().len()
        )));
    }

    let groups: Vec<(String, Vec<String>)> = state
        .optimizer_states()
        .iter()
        .map(|(g, opt)| {
            let names = opt.params().iter().map(|&id| state.model.params().name(id).to_string()).collect();
            (g.to_string(), names)
        })
        .collect();
    for (group, names) in groups {
        let find = |kind: &str, name: &str| -> Result<Tensor<f32>> {
            let full = format!("{group}/{name}");
            let e = entries
                .iter()
                .find(|e| e.kind == kind && e.name == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing {kind} for {full}")))?;
            read_blob(dir, e)
        };
        let first_moment = names.iter().map(|n| find("adam_m", n)).collect::<Result<Vec<_>>>()?;
        let second_moment = names.iter().map(|n| find("adam_v", n)).collect::<Result<Vec<_>>>()?;
        let step = *sf
            .optimizer_steps
            .get(&group)
            .ok_or_else(|| Error::Checkpoint(format!("missing step count for optimizer {group}")))?;
        state.set_optimizer_state(
            &group,
            AdamState {
                step,
                first_moment,
                second_moment,
            },
        )?;
    }
    state.step = sf.step;
    state.rng = sf.rng;
    Ok((config, state, sf.sampler))
}

//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic `NMSFCKPT`, `u32` format version, `u64` header
//! length, a UTF-8 JSON header, then every tensor as little-endian `f64` in
//! header order. The header echoes the model configuration, input
//! normalization, training epoch and RNG states.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::PathwayConfig;
use super::model::{build_slowfast, InputNorm, SlowFast};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NMSFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Restorable ChaCha generator position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (128-bit).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Invalid(format!("malformed RNG state {self:?}"));
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

/// Everything in the header besides the tensor index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    /// Named generator states, e.g. `("trainer", ..)`.
    pub rng: Vec<(String, RngState)>,
    /// Free-form training notes (validation scores etc.).
    pub notes: serde_json::Value,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        Self {
            epoch: 0,
            rng: Vec::new(),
            notes: serde_json::Value::Null,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    buffer: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: PathwayConfig,
    input_norm: InputNorm,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
pub struct Checkpoint {
    pub model: SlowFast,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(path: &Path, model: &mut SlowFast, meta: &CheckpointMeta) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    let mut meta = meta.clone();
    meta.rng.retain(|(n, _)| n != "dropout");
    meta.rng.push(("dropout".into(), RngState::capture(model.dropout_rng())));
    model.visit_params(&mut |p| {
        entries.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            buffer: false,
        });
        payload.extend_from_slice(&p.value);
    });
    model.visit_buffers(&mut |b| {
        entries.push(TensorEntry {
            name: b.name.clone(),
            shape: b.shape.clone(),
            buffer: true,
        });
        payload.extend_from_slice(&b.value);
    });
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        input_norm: model.input_norm().clone(),
        meta,
        tensors: entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("partial");
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for v in &payload {
            w.write_all(&v.to_le_bytes())?;
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        Error::io(
            path,
            std::io::Error::new(e.kind(), format!("{e} (partial checkpoint left at {})", tmp.display())),
        )
    })
}

/// Load a checkpoint. With `expected`, the stored configuration must match it exactly.
pub fn load_checkpoint(path: &Path, expected: Option<&PathwayConfig>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"),
        ));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])
        .map_err(|e| Error::format(path, format!("header: {e}")))?;
    if let Some(cfg) = expected {
        if *cfg != header.config {
            return Err(Error::format(
                path,
                format!(
                    "model configuration mismatch: checkpoint has {}, run expects {}",
                    serde_json::to_string(&header.config)?,
                    serde_json::to_string(cfg)?
                ),
            ));
        }
    }
    let mut model = build_slowfast(&header.config, 0)?;
    let inventory = model.shape_inventory();
    if inventory.len() != header.tensors.len() {
        return Err(Error::format(
            path,
            format!("{} tensors stored, model has {}", header.tensors.len(), inventory.len()),
        ));
    }
    for ((name, shape), e) in inventory.iter().zip(&header.tensors) {
        if *name != e.name || *shape != e.shape {
            return Err(Error::format(
                path,
                format!("tensor {} {:?} does not match model tensor {name} {shape:?}", e.name, e.shape),
            ));
        }
    }
    let total: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    let data = &bytes[header_end..];
    if data.len() != total * 8 {
        return Err(Error::format(path, format!("payload has {} bytes, expected {}", data.len(), total * 8)));
    }
    let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    model.visit_params(&mut |p| p.value.iter_mut().for_each(|v| *v = values.next().unwrap()));
    model.visit_buffers(&mut |b| b.value.iter_mut().for_each(|v| *v = values.next().unwrap()));
    model.set_input_norm(header.input_norm)?;
    if let Some((_, st)) = header.meta.rng.iter().find(|(n, _)| n == "dropout") {
        model.set_dropout_rng(st.restore()?);
    }
    Ok(Checkpoint {
        model,
        meta: header.meta,
    })
}

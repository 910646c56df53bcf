//! Checkpoint files.
//!
//! ```text
//! magic      8 bytes  "ARTFCKPT"
//! version    u32 LE
//! header_len u64 LE
//! header     JSON (architecture, its SHA-256, category, training config,
//!            iteration, RNG state, tensor directory, payload SHA-256)
//! payload    f64 LE values; each directory entry gives name, shape and
//!            element offset
//! ```
//!
//! Weight tensors are stored under their weight names, object codes as `code.NNNNN`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gradcore::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodecoder::train::TrainConfig;
use crate::error::{Error, Result};
use crate::neuralfield::{ArchConfig, LatentCode, ModelWeights, SharedWeights};
use crate::worldgen::scene::Category;

pub const MAGIC: &[u8; 8] = b"ARTFCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Serializable ChaCha8 position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// `u128` word position as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.seed).map_err(|e| Error::CorruptCheckpoint(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::CorruptCheckpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::CorruptCheckpoint(format!("rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    /// Object codes `z_obj`, indexed by object.
    pub codes: Vec<Vec<f64>>,
    pub category: Category,
    pub train: TrainConfig,
    pub iteration: u64,
    pub rng: RngState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    arch_sha256: String,
    category: Category,
    train: TrainConfig,
    iteration: u64,
    rng: RngState,
    tensors: Vec<TensorEntry>,
    payload_values: u64,
    payload_sha256: String,
}

pub fn code_name(obj: usize) -> String {
    format!("code.{obj:05}")
}

impl Checkpoint {
    pub fn shared(&self) -> SharedWeights {
        self.weights.shared()
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.weights.arch
    }

    /// Mean of the trained object codes.
    pub fn mean_code(&self) -> Vec<f64> {
        let k = self.weights.arch.k_obj;
        let mut mean = vec![0.0; k];
        for c in &self.codes {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v;
            }
        }
        let n = self.codes.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Code of training object `obj` at articulation `q`.
    pub fn code(&self, obj: usize, q: f64) -> Result<LatentCode> {
        let z = self
            .codes
            .get(obj)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no object {obj}")))?;
        LatentCode::from_q(q, z.clone())
    }

    fn entries(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = self
            .weights
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), t.shape().to_vec(), t.data()))
            .collect();
        for (i, c) in self.codes.iter().enumerate() {
            out.push((code_name(i), vec![c.len()], c.as_slice()));
        }
        out
    }

    /// SHA-256 over every stored value, in directory order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, _, data) in self.entries() {
            h.update(name.as_bytes());
            for v in data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        let mut offset = 0u64;
        for (name, shape, data) in self.entries() {
            tensors.push(TensorEntry {
                name,
                shape,
                offset,
            });
            offset += data.len() as u64;
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            arch: self.weights.arch.clone(),
            arch_sha256: self.weights.arch.hash(),
            category: self.category,
            train: self.train.clone(),
            iteration: self.iteration,
            rng: self.rng.clone(),
            tensors,
            payload_values: offset,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 20 {
            return Err(corrupt("file is shorter than the fixed preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::ConfigMismatch(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("header extends past end of file"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        let payload = &bytes[header_end..];
        if payload.len() as u64 != header.payload_values * 8 {
            return Err(Error::CorruptCheckpoint(format!(
                "payload holds {} bytes, header declares {} values",
                payload.len(),
                header.payload_values
            )));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(Error::HashMismatch("payload SHA-256 does not match the header".into()));
        }
        if header.arch.hash() != header.arch_sha256 {
            return Err(Error::HashMismatch("architecture hash does not match the stored config".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut tensors = BTreeMap::new();
        let mut codes = Vec::new();
        for e in &header.tensors {
            let len: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let data = values
                .get(start..start + len)
                .ok_or_else(|| corrupt(&format!("tensor {} exceeds the payload", e.name)))?
                .to_vec();
            if let Some(idx) = e.name.strip_prefix("code.") {
                let idx: usize = idx.parse().map_err(|_| corrupt(&format!("bad code name {}", e.name)))?;
                if idx != codes.len() {
                    return Err(corrupt("object codes are not stored in order"));
                }
                codes.push(data);
            } else {
                tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
            }
        }
        let weights = ModelWeights {
            arch: header.arch,
            tensors,
        };
        weights.validate().map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        if codes.iter().any(|c| c.len() != weights.arch.k_obj) {
            return Err(corrupt("object code length differs from arch.k_obj"));
        }
        Ok(Self {
            weights,
            codes,
            category: header.category,
            train: header.train,
            iteration: header.iteration,
            rng: header.rng,
        })
    }
}

pub fn save_checkpoint(cp: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = cp.to_bytes()?;
    // Write then rename so a crash never leaves a half-written checkpoint behind.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Lists differing fields of two architecture configs, e.g. `field_hidden: 64 vs 32`.
pub fn arch_diff(found: &ArchConfig, expected: &ArchConfig) -> Vec<String> {
    let a = serde_json::to_value(found).expect("config serializes");
    let b = serde_json::to_value(expected).expect("config serializes");
    let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
        return Vec::new();
    };
    a.iter()
        .filter_map(|(k, va)| match b.get(k) {
            Some(vb) if vb == va => None,
            vb => Some(format!(
                "{k}: {va} (checkpoint) vs {} (expected)",
                vb.map(|v| v.to_string()).unwrap_or_else(|| "missing".into())
            )),
        })
        .collect()
}

/// Loads a checkpoint and rejects it unless its architecture equals `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ArchConfig) -> Result<Checkpoint> {
    let cp = load_checkpoint(path)?;
    let diff = arch_diff(&cp.weights.arch, expected);
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(diff.join("; ")));
    }
    Ok(cp)
}

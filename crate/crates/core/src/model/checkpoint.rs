//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `OAFCKPT1`, a little-endian `u64` header
//! length, a JSON header (configuration echo, config hash, step counters,
//! tensor index), then every tensor's `f64` values in little-endian order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::IxDyn;
use oaf_autograd::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ParamSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"OAFCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    extra: serde_json::Value,
    config_hash: String,
    step: u64,
    adam_t: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Free-form configuration echo, e.g. the training settings.
    pub extra: serde_json::Value,
    pub config_hash: String,
    pub step: u64,
    pub adam_t: u64,
    pub tensors: Vec<(String, TensorKind, Tensor)>,
}

/// SHA-256 over the JSON form of the model configuration and `extra`.
pub fn config_hash(model: &ModelConfig, extra: &serde_json::Value) -> String {
    let text = serde_json::to_string(&(model, extra)).expect("config serializes");
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

impl Checkpoint {
    pub fn from_model(model: &Model, extra: serde_json::Value, step: u64) -> Self {
        let mut tensors = Vec::new();
        for (name, t) in model.params().iter() {
            tensors.push((name.to_string(), TensorKind::Param, t.clone()));
        }
        for (name, t) in model.buffers().iter() {
            tensors.push((name.to_string(), TensorKind::Buffer, t.clone()));
        }
        Self {
            config_hash: config_hash(model.config(), &extra),
            model: model.config().clone(),
            extra,
            step,
            adam_t: 0,
            tensors,
        }
    }

    pub fn tensors_of(&self, kind: TensorKind) -> ParamSet {
        let mut set = ParamSet::new();
        for (name, k, t) in &self.tensors {
            if *k == kind {
                set.insert(name.clone(), t.clone());
            }
        }
        set
    }

    /// Rebuild the model, validating tensor names and shapes.
    pub fn to_model(&self) -> Result<Model> {
        Model::from_parts(
            self.model.clone(),
            self.tensors_of(TensorKind::Param),
            self.tensors_of(TensorKind::Buffer),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = Header {
            version: VERSION,
            model: self.model.clone(),
            extra: self.extra.clone(),
            config_hash: self.config_hash.clone(),
            step: self.step,
            adam_t: self.adam_t,
            tensors: self
                .tensors
                .iter()
                .map(|(name, kind, t)| TensorEntry {
                    name: name.clone(),
                    kind: *kind,
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(16 + json.len() + 8 * self.tensors.iter().map(|t| t.2.len()).sum::<usize>());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, _, t) in &self.tensors {
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        // Write then rename so a crash never leaves a truncated checkpoint.
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(ckpt_err(path, "not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes
            .get(16..16 + len)
            .ok_or_else(|| ckpt_err(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;
        if header.version != VERSION {
            return Err(ckpt_err(path, format!("unsupported version {}", header.version)));
        }
        if config_hash(&header.model, &header.extra) != header.config_hash {
            return Err(ckpt_err(path, "config hash mismatch"));
        }
        let mut pos = 16 + len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = bytes
                .get(pos..pos + 8 * n)
                .ok_or_else(|| ckpt_err(path, format!("truncated data for {}", e.name)))?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos += 8 * n;
            let t = Tensor::from_shape_vec(IxDyn(&e.shape), values).map_err(|err| ckpt_err(path, err))?;
            tensors.push((e.name, e.kind, t));
        }
        if pos != bytes.len() {
            return Err(ckpt_err(path, "trailing bytes after tensor data"));
        }
        Ok(Self {
            model: header.model,
            extra: header.extra,
            config_hash: header.config_hash,
            step: header.step,
            adam_t: header.adam_t,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::Spectrogram;
    use crate::model::{AttentionTarget, Variant};
    use ndarray::Array2;

    #[test]
    fn save_load_forward_is_bit_identical() {
        let cfg = ModelConfig {
            n_bins: 16,
            conv_channels: vec![2, 2, 2],
            fc_width: 8,
            n_feat: 6,
            attention_dim: 4,
            ..ModelConfig::default()
        }
        .with_attention(AttentionTarget::Feat, 2)
        .with_seed(5);
        let model = Model::new(cfg).unwrap();
        let spec = Spectrogram::from_values(Array2::from_shape_fn((9, 16), |(t, f)| ((t * 5 + f * 3) % 11) as f64 / 11.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = Checkpoint::from_model(&model, serde_json::json!({"lr": 1e-3}), 42);
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        let restored = back.to_model().unwrap();
        assert_eq!(restored.infer(&spec).unwrap(), model.infer(&spec).unwrap());
    }

    #[test]
    fn tampered_or_mismatched_checkpoints_fail() {
        let model = Model::new(ModelConfig { n_bins: 8, ..ModelConfig::default() }.with_variant(Variant::LinearProbe)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut ck = Checkpoint::from_model(&model, serde_json::Value::Null, 0);
        ck.save(&p).unwrap();

        let mut bytes = std::fs::read(&p).unwrap();
        let at = bytes.windows(7).position(|w| w == b"\"seed\":").unwrap();
        bytes[at + 7] = b'9';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Checkpoint(_))));

        ck.model.n_bins = 9;
        ck.config_hash = config_hash(&ck.model, &ck.extra);
        assert!(ck.to_model().is_err());

        std::fs::write(&p, b"garbage").unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}

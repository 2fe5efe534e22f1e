use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transformer::parameter_shapes;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"DPCKPT\0\0";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A model configuration plus its named parameters.
///
/// `vocab` carries the tokenizer vocabulary the parameters were trained
/// against (empty for a freshly built model).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub parameters: BTreeMap<String, Tensor>,
    pub training_seed: u64,
    pub provenance: String,
    pub vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    training_seed: u64,
    provenance: String,
    vocab: Vec<String>,
    parameters: Vec<BlobHeader>,
}

#[derive(Serialize, Deserialize)]
struct BlobHeader {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn parameter_count(&self) -> usize {
        self.parameters.values().map(Tensor::numel).sum()
    }

    /// Checks that parameter names and shapes are exactly those of the
    /// architecture.
    pub fn validate(&self) -> Result<()> {
        self.model_config.validate()?;
        let want = parameter_shapes(&self.model_config);
        for (name, shape) in &want {
            match self.parameters.get(name) {
                None => return Err(Error::Validation(format!("missing parameter `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Validation(format!(
                        "parameter `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.parameters.keys().find(|k| !want.contains_key(*k)) {
            return Err(Error::Validation(format!("unexpected parameter `{extra}`")));
        }
        if !self.vocab.is_empty() && self.vocab.len() != self.model_config.vocab_size {
            return Err(Error::Validation(format!(
                "vocabulary has {} entries but vocab_size is {}",
                self.vocab.len(),
                self.model_config.vocab_size
            )));
        }
        Ok(())
    }

    /// Binary container: magic, `u32` version, `u64` header length, JSON
    /// header, then every parameter as little-endian `f64` in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_config: self.model_config.clone(),
            training_seed: self.training_seed,
            provenance: self.provenance.clone(),
            vocab: self.vocab.clone(),
            parameters: self
                .parameters
                .iter()
                .map(|(name, t)| BlobHeader {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + self.parameter_count() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.parameters.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::Validation(format!("checkpoint: {msg}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| corrupt("truncated"))?;
        if body.len() < hlen {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let mut data = &body[hlen..];
        let mut parameters = BTreeMap::new();
        for blob in header.parameters {
            let n: usize = blob.shape.iter().product();
            if data.len() < n * 8 {
                return Err(corrupt(&format!("truncated data for `{}`", blob.name)));
            }
            let values = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[n * 8..];
            if parameters
                .insert(blob.name.clone(), Tensor::new(blob.shape, values)?)
                .is_some()
            {
                return Err(corrupt(&format!("parameter `{}` appears twice", blob.name)));
            }
        }
        if !data.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        let ckpt = Self {
            model_config: header.model_config,
            parameters,
            training_seed: header.training_seed,
            provenance: header.provenance,
            vocab: header.vocab,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized container.
    pub fn digest(&self) -> Result<String> {
        Ok(crate::io::hex(&Sha256::digest(self.to_bytes()?)))
    }
}

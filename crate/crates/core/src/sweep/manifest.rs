//! The sweep manifest: grid definition, seeds, corpus source and per-cell
//! status, stored as line-delimited records.
//!
//! ```text
//! {"format":"sweep_manifest","format_version":1,"sweep_id":…,…}   header
//! {"record":"model","id":"encoder-4l","family":"encoder",…}        × models
//! {"record":"dropout","name":"baseline","attention_rate":0.1,…}    × configs
//! {"record":"cell","model":…,"config":…,"status":"pending",…}      × cells
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{numbered_lines, parse_line, read_to_string, write_atomic};
use crate::mc_eval::DEFAULT_PASSES;
use crate::model::{DropoutConfig, Family, ModelConfig, Pooling};
use crate::stats::DEFAULT_ALPHA;
use crate::trainer::TrainConfig;

pub const MANIFEST_FORMAT: &str = "sweep_manifest";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MAX_SEQ_LEN: usize = 16;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// A model to build and train. `vocab_size` comes from the corpus at run
/// time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub family: Family,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
    /// Weight init std; the architecture default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<Pooling>,
    /// Overrides the manifest's init seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
}

impl ModelSpec {
    /// The 4-layer desk architecture with fan-in init.
    pub fn desk(id: &str, family: Family) -> Self {
        let c = ModelConfig::desk(family, 1, DEFAULT_MAX_SEQ_LEN);
        Self {
            id: id.to_owned(),
            family,
            layers: c.layers,
            heads: c.heads,
            d_model: c.d_model,
            d_ffn: c.d_ffn,
            max_seq_len: c.max_seq_len,
            init_std: Some(c.init_std),
            pooling: None,
            init_seed: None,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(
            self.family,
            self.layers,
            self.heads,
            self.d_model,
            self.d_ffn,
            vocab_size,
            self.max_seq_len,
        );
        if let Some(s) = self.init_std {
            c.init_std = s;
        }
        if let Some(p) = self.pooling {
            c.pooling = p;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub training: u64,
    /// Sweep seed from which per-cell MC base seeds are derived.
    pub mc: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            data: seed,
            init: seed,
            training: seed,
            mc: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic {
        memory: usize,
        reasoning: usize,
    },
    /// A file in the ingestion format.
    Ingest {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Pending,
    Trained,
    Evaluated,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub model: String,
    pub config: String,
    pub status: CellStatus,
    pub mc_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepManifest {
    pub sweep_id: String,
    /// Stamped into reports so re-rendering is byte-identical.
    pub created_at: String,
    pub passes: usize,
    pub seeds: Seeds,
    pub corpus: CorpusSource,
    pub train_fraction: f64,
    pub train: TrainConfig,
    pub alpha: f64,
    /// Bonferroni family size for within-model tests; the number of tests
    /// actually run when absent.
    pub family_size: Option<usize>,
    pub models: Vec<ModelSpec>,
    pub dropout_configs: Vec<DropoutConfig>,
    pub cells: Vec<Cell>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    format_version: u32,
    sweep_id: String,
    created_at: String,
    passes: usize,
    seeds: Seeds,
    corpus: CorpusSource,
    train_fraction: f64,
    train: TrainConfig,
    alpha: f64,
    #[serde(default)]
    family_size: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Model(ModelSpec),
    Dropout(DropoutConfig),
    Cell(Cell),
}

/// Per-cell MC base seed: the first 8 bytes of
/// SHA-256(`seed`, model id, config name).
pub fn cell_seed(seed: u64, model: &str, config: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(model.as_bytes());
    h.update([0]);
    h.update(config.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Ids become file names, so keep them to a portable alphabet.
fn check_id(kind: &str, id: &str) -> Result<()> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        || id.starts_with('.')
    {
        return Err(Error::invalid(format!(
            "{kind} id `{id}` must be non-empty ASCII letters, digits, `-`, `_` or `.`"
        )));
    }
    Ok(())
}

impl SweepManifest {
    /// A fresh manifest with every cell pending.
    pub fn new(
        sweep_id: &str,
        created_at: &str,
        models: Vec<ModelSpec>,
        dropout_configs: Vec<DropoutConfig>,
        passes: usize,
        seeds: Seeds,
    ) -> Result<Self> {
        let cells = models
            .iter()
            .flat_map(|m| {
                dropout_configs.iter().map(move |c| Cell {
                    model: m.id.clone(),
                    config: c.name.clone(),
                    status: CellStatus::Pending,
                    mc_seed: cell_seed(seeds.mc, &m.id, &c.name),
                    checkpoint_digest: None,
                    error: None,
                })
            })
            .collect();
        let m = Self {
            sweep_id: sweep_id.to_owned(),
            created_at: created_at.to_owned(),
            passes,
            seeds,
            corpus: CorpusSource::Synthetic {
                memory: 500,
                reasoning: 500,
            },
            train_fraction: DEFAULT_TRAIN_FRACTION,
            train: TrainConfig {
                seed: seeds.training,
                ..TrainConfig::desk()
            },
            alpha: DEFAULT_ALPHA,
            family_size: None,
            models,
            dropout_configs,
            cells,
        };
        m.validate()?;
        Ok(m)
    }

    /// One encoder and one decoder at desk scale under the five presets.
    pub fn desk(sweep_id: &str, created_at: &str, seed: u64) -> Result<Self> {
        Self::new(
            sweep_id,
            created_at,
            vec![
                ModelSpec::desk("encoder-4l", Family::Encoder),
                ModelSpec::desk("decoder-4l", Family::Decoder),
            ],
            DropoutConfig::presets(),
            DEFAULT_PASSES,
            Seeds::all(seed),
        )
    }

    /// Nineteen desk-scale stand-ins named after a typical pretrained
    /// checkpoint roster (15 encoders, 4 decoders) under the five presets:
    /// 95 cells. Each model gets its own init seed.
    pub fn roster_grid(sweep_id: &str, created_at: &str, seed: u64) -> Result<Self> {
        const ROSTER: [(&str, Family); 19] = [
            ("bert-base-uncased", Family::Encoder),
            ("bert-large-uncased", Family::Encoder),
            ("bert-tiny", Family::Encoder),
            ("roberta-base", Family::Encoder),
            ("distilroberta-base", Family::Encoder),
            ("roberta-base-squad2", Family::Encoder),
            ("deberta-v3-base", Family::Encoder),
            ("deberta-v3-small", Family::Encoder),
            ("albert-base-v2", Family::Encoder),
            ("electra-base-discriminator", Family::Encoder),
            ("distilbert-base-uncased", Family::Encoder),
            ("spanbert-base-cased", Family::Encoder),
            ("scibert-scivocab-uncased", Family::Encoder),
            ("all-minilm-l6-v2", Family::Encoder),
            ("gpt2", Family::Decoder),
            ("gpt2-medium", Family::Decoder),
            ("distilgpt2", Family::Decoder),
            ("tiny-gpt2", Family::Decoder),
            ("gpt-neo-125m", Family::Decoder),
        ];
        let models = ROSTER
            .iter()
            .map(|(id, family)| ModelSpec {
                init_seed: Some(cell_seed(seed, id, "init")),
                ..ModelSpec::desk(id, *family)
            })
            .collect();
        Self::new(
            sweep_id,
            created_at,
            models,
            DropoutConfig::presets(),
            DEFAULT_PASSES,
            Seeds::all(seed),
        )
    }

    pub fn validate(&self) -> Result<()> {
        check_id("sweep", &self.sweep_id)?;
        if self.passes == 0 {
            return Err(Error::invalid("passes must be at least 1"));
        }
        if self.models.is_empty() || self.dropout_configs.is_empty() {
            return Err(Error::invalid(
                "a sweep needs at least one model and one dropout configuration",
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction outside (0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha outside (0, 1)"));
        }
        if self.family_size == Some(0) {
            return Err(Error::invalid("family_size must be at least 1"));
        }
        self.train.validate()?;
        let mut ids = HashSet::new();
        for m in &self.models {
            check_id("model", &m.id)?;
            if !ids.insert(m.id.as_str()) {
                return Err(Error::invalid(format!("duplicate model id `{}`", m.id)));
            }
            m.model_config(1)?;
        }
        let mut names = HashSet::new();
        for c in &self.dropout_configs {
            c.validate()?;
            check_id("dropout config", &c.name)?;
            if !names.insert(c.name.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate dropout config `{}`",
                    c.name
                )));
            }
        }
        if self.cells.len() != self.models.len() * self.dropout_configs.len() {
            return Err(Error::Validation(format!(
                "{} cells for {} models × {} configs",
                self.cells.len(),
                self.models.len(),
                self.dropout_configs.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.cells {
            if !ids.contains(c.model.as_str()) || !names.contains(c.config.as_str()) {
                return Err(Error::Validation(format!(
                    "cell {}/{} names an unknown model or config",
                    c.model, c.config
                )));
            }
            if !seen.insert((c.model.as_str(), c.config.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate cell {}/{}",
                    c.model, c.config
                )));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn config(&self, name: &str) -> Option<&DropoutConfig> {
        self.dropout_configs.iter().find(|c| c.name == name)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            format: MANIFEST_FORMAT.to_owned(),
            format_version: MANIFEST_FORMAT_VERSION,
            sweep_id: self.sweep_id.clone(),
            created_at: self.created_at.clone(),
            passes: self.passes,
            seeds: self.seeds,
            corpus: self.corpus.clone(),
            train_fraction: self.train_fraction,
            train: self.train.clone(),
            alpha: self.alpha,
            family_size: self.family_size,
        };
        let mut out = serde_json::to_string(&header)? + "\n";
        let records = self
            .models
            .iter()
            .cloned()
            .map(Record::Model)
            .chain(self.dropout_configs.iter().cloned().map(Record::Dropout))
            .chain(self.cells.iter().cloned().map(Record::Cell));
        for r in records {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = numbered_lines(text);
        let (n, first) = lines
            .next()
            .ok_or_else(|| Error::Validation("empty manifest".into()))?;
        let h: Header = parse_line(first, n)?;
        if h.format != MANIFEST_FORMAT {
            return Err(Error::Validation(format!(
                "line {n}: format `{}` is not `{MANIFEST_FORMAT}`",
                h.format
            )));
        }
        if h.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: h.format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        let (mut models, mut dropout_configs, mut cells) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in lines {
            match parse_line::<Record>(line, n)? {
                Record::Model(m) => models.push(m),
                Record::Dropout(d) => dropout_configs.push(d),
                Record::Cell(c) => cells.push(c),
            }
        }
        let m = Self {
            sweep_id: h.sweep_id,
            created_at: h.created_at,
            passes: h.passes,
            seeds: h.seeds,
            corpus: h.corpus,
            train_fraction: h.train_fraction,
            train: h.train,
            alpha: h.alpha,
            family_size: h.family_size,
            models,
            dropout_configs,
            cells,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path.as_ref())?)
    }
}

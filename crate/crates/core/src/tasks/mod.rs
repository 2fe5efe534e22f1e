//! Balanced memory/reasoning binary-classification corpus: synthetic
//! generators, the line-delimited ingestion format, stratified splitting and
//! tokenization.

mod generate;
mod ingest;
mod split;
mod tokenize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{gen_memory, gen_reasoning, synthetic_corpus};
pub use ingest::{
    ingest, ingest_str, write_samples, IngestReport, INGEST_FORMAT_VERSION, MEMORY_PREMISE_LIMIT,
};
pub use split::{split, DatasetSplit};
pub use tokenize::{
    tokenize_text, Encoded, Vocabulary, CLS, EOS, SEP, SPECIAL_TOKENS, UNK, UNK_ID,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Memory,
    Reasoning,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Memory, Domain::Reasoning];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Memory => "memory",
            Domain::Reasoning => "reasoning",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(Domain::Memory),
            "reasoning" => Ok(Domain::Reasoning),
            other => Err(Error::invalid(format!("unknown domain `{other}`"))),
        }
    }
}

/// One binary-classification item: does `candidate` fit `premise`?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    pub premise: String,
    pub candidate: String,
    pub label: bool,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("sample id is empty".into()));
        }
        if self.premise.trim().is_empty() {
            return Err(Error::Validation(format!(
                "sample `{}` has an empty premise",
                self.id
            )));
        }
        if self.candidate.trim().is_empty() {
            return Err(Error::Validation(format!(
                "sample `{}` has an empty candidate",
                self.id
            )));
        }
        Ok(())
    }
}

/// `(true, false)` label counts per domain.
pub fn label_counts(samples: &[Sample], domain: Domain) -> (usize, usize) {
    samples
        .iter()
        .filter(|s| s.domain == domain)
        .fold(
            (0, 0),
            |(t, f), s| if s.label { (t + 1, f) } else { (t, f + 1) },
        )
}

pub fn domain_count(samples: &[Sample], domain: Domain) -> usize {
    samples.iter().filter(|s| s.domain == domain).count()
}

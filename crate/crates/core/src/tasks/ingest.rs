//! Line-delimited sample files.
//!
//! ```text
//! {"format_version":1}
//! {"id":"q-1","domain":"memory","premise":"...","candidate":"...","label":true}
//! ```
//!
//! Every record carries exactly the fields `id`, `domain`, `premise`,
//! `candidate`, `label`. Memory premises longer than
//! [`MEMORY_PREMISE_LIMIT`] characters are truncated on ingest.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Domain, Sample};
use crate::error::{Error, Result};
use crate::io::{numbered_lines, parse_line, read_to_string};

pub const INGEST_FORMAT_VERSION: u32 = 1;
pub const MEMORY_PREMISE_LIMIT: usize = 200;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub samples: Vec<Sample>,
    /// Line numbers of memory records whose premise was truncated.
    pub truncated: Vec<usize>,
}

fn truncate_chars(s: &str, limit: usize) -> Option<String> {
    s.char_indices()
        .nth(limit)
        .map(|(idx, _)| s[..idx].to_owned())
}

pub fn ingest_str(text: &str, format_version: u32) -> Result<IngestReport> {
    if format_version != INGEST_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: format_version,
            expected: INGEST_FORMAT_VERSION,
        });
    }
    let mut lines = numbered_lines(text);
    let Some((hline, htext)) = lines.next() else {
        return Ok(IngestReport::default());
    };
    let header: Header = parse_line(htext, hline)?;
    if header.format_version != format_version {
        return Err(Error::FormatVersion {
            found: header.format_version,
            expected: format_version,
        });
    }

    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (line_no, line) in lines {
        let mut sample: Sample = parse_line(line, line_no)?;
        sample
            .validate()
            .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Validation(format!(
                "line {line_no}: duplicate id `{}`",
                sample.id
            )));
        }
        if sample.domain == Domain::Memory {
            if let Some(cut) = truncate_chars(&sample.premise, MEMORY_PREMISE_LIMIT) {
                sample.premise = cut;
                report.truncated.push(line_no);
            }
        }
        report.samples.push(sample);
    }
    Ok(report)
}

pub fn ingest(path: impl AsRef<Path>, format_version: u32) -> Result<IngestReport> {
    ingest_str(&read_to_string(path.as_ref())?, format_version)
}

/// Serialises samples in the ingestion format, header first.
pub fn write_samples(samples: &[Sample]) -> Result<String> {
    let mut out = serde_json::to_string(&Header {
        format_version: INGEST_FORMAT_VERSION,
    })?;
    out.push('\n');
    out.push_str(&crate::io::to_jsonl(samples)?);
    Ok(out)
}

//! Line-delimited prediction-matrix files.
//!
//! ```text
//! {"format":"prediction_matrix","format_version":1,"passes":M,"samples":N,"dropout":{…},"mode":"stochastic","base_seed":…,"checkpoint_digest":"…"}
//! {"sample":0,"id":"mem-00001","domain":"memory","label":true}      × N
//! {"pass":0,"predictions":"0110…","probabilities":[0.12,…]}           × M
//! ```
//!
//! `predictions` holds one `0`/`1` character per sample. Probabilities are
//! written with round-trip precision, so a reloaded matrix is bit-identical.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mc_run, PredictionMatrix, SampleMeta};
use crate::error::{Error, Result};
use crate::io::{numbered_lines, parse_line, read_to_string, write_atomic};
use crate::model::{Checkpoint, DropoutConfig, EvalMode};
use crate::tasks::{Domain, Encoded};

pub const MATRIX_FORMAT: &str = "prediction_matrix";
pub const MATRIX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    format_version: u32,
    passes: usize,
    samples: usize,
    dropout: DropoutConfig,
    mode: EvalMode,
    base_seed: u64,
    checkpoint_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    sample: usize,
    id: String,
    domain: Domain,
    label: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PassRecord {
    pass: usize,
    predictions: String,
    probabilities: Vec<f64>,
}

impl PredictionMatrix {
    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            format: MATRIX_FORMAT.to_owned(),
            format_version: MATRIX_FORMAT_VERSION,
            passes: self.passes(),
            samples: self.n_samples(),
            dropout: self.dropout.clone(),
            mode: self.mode,
            base_seed: self.base_seed,
            checkpoint_digest: self.checkpoint_digest.clone(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for (i, s) in self.samples.iter().enumerate() {
            let rec = SampleRecord {
                sample: i,
                id: s.id.clone(),
                domain: s.domain,
                label: s.label,
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        for m in 0..self.passes() {
            let rec = PassRecord {
                pass: m,
                predictions: self
                    .pass_predictions(m)
                    .iter()
                    .map(|&b| if b { '1' } else { '0' })
                    .collect(),
                probabilities: self.pass_probabilities(m).to_vec(),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_jsonl()?.as_bytes())
    }

    /// Parses a matrix file. Structural problems are errors; cells whose
    /// stored prediction disagrees with the 0.5 threshold, and deterministic
    /// rows that differ, are returned as warnings so a tampered file can
    /// still be inspected.
    pub fn parse(text: &str) -> Result<(PredictionMatrix, Vec<String>)> {
        let mut lines = numbered_lines(text);
        let (line_no, first) = lines
            .next()
            .ok_or_else(|| Error::Validation("empty prediction matrix file".into()))?;
        let header: Header = parse_line(first, line_no)?;
        if header.format != MATRIX_FORMAT {
            return Err(Error::Validation(format!(
                "line {line_no}: format `{}` is not `{MATRIX_FORMAT}`",
                header.format
            )));
        }
        if header.format_version != MATRIX_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: header.format_version,
                expected: MATRIX_FORMAT_VERSION,
            });
        }
        if header.passes == 0 || header.samples == 0 {
            return Err(Error::Validation(
                "passes and samples must be at least 1".into(),
            ));
        }
        header.dropout.validate()?;

        let n = header.samples;
        let mut samples = Vec::with_capacity(n);
        let mut seen = std::collections::HashSet::new();
        for i in 0..n {
            let (line_no, line) = lines.next().ok_or_else(|| {
                Error::Validation(format!("expected {n} sample records, found {i}"))
            })?;
            let rec: SampleRecord = parse_line(line, line_no)?;
            if rec.sample != i {
                return Err(Error::Validation(format!(
                    "line {line_no}: sample index {} out of order",
                    rec.sample
                )));
            }
            if !seen.insert(rec.id.clone()) {
                return Err(Error::Validation(format!(
                    "line {line_no}: duplicate sample id `{}`",
                    rec.id
                )));
            }
            samples.push(SampleMeta {
                id: rec.id,
                domain: rec.domain,
                label: rec.label,
            });
        }

        let mut predictions = Vec::with_capacity(header.passes * n);
        let mut probabilities = Vec::with_capacity(header.passes * n);
        for m in 0..header.passes {
            let (line_no, line) = lines.next().ok_or_else(|| {
                Error::Validation(format!(
                    "expected {} pass records, found {m}",
                    header.passes
                ))
            })?;
            let rec: PassRecord = parse_line(line, line_no)?;
            if rec.pass != m {
                return Err(Error::Validation(format!(
                    "line {line_no}: pass index {} out of order",
                    rec.pass
                )));
            }
            if rec.predictions.chars().count() != n || rec.probabilities.len() != n {
                return Err(Error::Validation(format!(
                    "line {line_no}: pass {m} does not have {n} entries"
                )));
            }
            for c in rec.predictions.chars() {
                predictions.push(match c {
                    '1' => true,
                    '0' => false,
                    other => {
                        return Err(Error::Validation(format!(
                            "line {line_no}: prediction character `{other}`"
                        )));
                    }
                });
            }
            probabilities.extend(rec.probabilities);
        }
        if let Some((line_no, _)) = lines.next() {
            return Err(Error::Validation(format!(
                "line {line_no}: unexpected record after the last pass"
            )));
        }

        let pm = PredictionMatrix::from_parts(
            samples,
            predictions,
            probabilities,
            header.dropout,
            header.mode,
            header.base_seed,
            header.checkpoint_digest,
        )?;
        let mut warnings: Vec<String> = pm
            .threshold_violations()
            .into_iter()
            .map(|(m, i)| {
                format!(
                    "pass {m}, sample {i} (`{}`): prediction {} disagrees with probability {}",
                    pm.samples[i].id,
                    pm.prediction(m, i),
                    pm.probability(m, i)
                )
            })
            .collect();
        if pm.mode == EvalMode::Deterministic {
            if let Some(m) =
                (1..pm.passes()).find(|&m| pm.pass_probabilities(m) != pm.pass_probabilities(0))
            {
                warnings.push(format!(
                    "deterministic matrix: pass {m} differs from pass 0"
                ));
            }
        }
        Ok((pm, warnings))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(PredictionMatrix, Vec<String>)> {
        Self::parse(&read_to_string(path.as_ref())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MismatchField {
    Prediction,
    Probability,
}

/// A stored cell that replay did not reproduce bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub pass: usize,
    pub sample: usize,
    pub sample_id: String,
    pub field: MismatchField,
    pub stored: String,
    pub replayed: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let field = match self.field {
            MismatchField::Prediction => "prediction",
            MismatchField::Probability => "probability",
        };
        write!(
            f,
            "pass {}, sample {} (`{}`): stored {field} {} but replay gives {}",
            self.pass, self.sample, self.sample_id, self.stored, self.replayed
        )
    }
}

/// Re-runs the stored configuration and seed on `ckpt` and `test` and lists
/// every cell that differs. The checkpoint digest and sample ids must match
/// the stored ones.
pub fn verify(pm: &PredictionMatrix, ckpt: &Checkpoint, test: &Encoded) -> Result<Vec<Mismatch>> {
    let digest = ckpt.digest()?;
    if digest != pm.checkpoint_digest {
        return Err(Error::Validation(format!(
            "checkpoint digest {digest} does not match stored {}",
            pm.checkpoint_digest
        )));
    }
    if test.ids != pm.samples.iter().map(|s| s.id.clone()).collect::<Vec<_>>() {
        return Err(Error::Validation(
            "test samples differ from the stored sample list".into(),
        ));
    }
    let replay = mc_run(ckpt, test, &pm.dropout, pm.passes(), pm.base_seed)?;
    let mut out = Vec::new();
    for m in 0..pm.passes() {
        for i in 0..pm.n_samples() {
            let (a, b) = (pm.prediction(m, i), replay.prediction(m, i));
            if a != b {
                out.push(Mismatch {
                    pass: m,
                    sample: i,
                    sample_id: pm.samples[i].id.clone(),
                    field: MismatchField::Prediction,
                    stored: a.to_string(),
                    replayed: b.to_string(),
                });
            }
            let (p, q) = (pm.probability(m, i), replay.probability(m, i));
            if p.to_bits() != q.to_bits() {
                out.push(Mismatch {
                    pass: m,
                    sample: i,
                    sample_id: pm.samples[i].id.clone(),
                    field: MismatchField::Probability,
                    stored: format!("{p:e}"),
                    replayed: format!("{q:e}"),
                });
            }
        }
    }
    Ok(out)
}

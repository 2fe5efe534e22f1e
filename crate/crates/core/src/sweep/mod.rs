//! Model × dropout-configuration sweeps with on-disk persistence and resume.
//!
//! Layout under `<root>/<sweep_id>/`:
//!
//! ```text
//! manifest.jsonl
//! data/{train,test}.jsonl                 ingestion-format splits
//! models/<model>.ckpt, .history.jsonl, .train.json
//! raw/<model>__<config>.matrix.jsonl      prediction matrices
//! raw/<model>__<config>.summary.json      summary records
//! raw/comparisons.jsonl, raw/bundle.json
//! tables/*.txt, tables/*.csv, figures/*.svg
//! ```
//!
//! Each model is trained once and its checkpoint is evaluated under every
//! configuration. A cell's files are written before the manifest marks it
//! evaluated, and a resumed sweep never touches evaluated cells.

mod manifest;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, to_jsonl, write_atomic};
use crate::mc_eval::{mc_run, run_level_accuracy, summarize, PredictionMatrix};
use crate::model::{build, Checkpoint};
use crate::report::ReportBundle;
use crate::stats::{within_model_comparisons, ComparisonResult, SummaryRecord};
use crate::tasks::{
    ingest, split, synthetic_corpus, write_samples, DatasetSplit, Encoded, Vocabulary,
    INGEST_FORMAT_VERSION,
};
use crate::trainer::{evaluate_plain, train, TrainConfig, TrainHistory};

pub use manifest::{
    cell_seed, Cell, CellStatus, CorpusSource, ModelSpec, Seeds, SweepManifest,
    DEFAULT_MAX_SEQ_LEN, DEFAULT_SEED, DEFAULT_TRAIN_FRACTION, MANIFEST_FORMAT,
    MANIFEST_FORMAT_VERSION,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Loads or generates the corpus and splits it. Any failure here happens
/// before training starts.
pub fn prepare_split(source: &CorpusSource, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    let samples = match source {
        CorpusSource::Synthetic { memory, reasoning } => {
            synthetic_corpus(*memory, *reasoning, seed)?
        }
        CorpusSource::Ingest { path } => ingest(path, INGEST_FORMAT_VERSION)?.samples,
    };
    if samples.is_empty() {
        return Err(Error::invalid("corpus is empty"));
    }
    split(&samples, fraction, seed)
}

/// Builds and trains one model; the checkpoint carries the vocabulary.
pub fn train_model(
    spec: &ModelSpec,
    vocab: &Vocabulary,
    train_set: &Encoded,
    config: &TrainConfig,
    init_seed: u64,
) -> Result<(Checkpoint, TrainHistory)> {
    let cfg = spec.model_config(vocab.len())?;
    let mut fresh = build(&cfg, init_seed)?;
    fresh.vocab = vocab.tokens().to_vec();
    train(&fresh, train_set, config)
}

/// Encodes samples with the vocabulary stored in `ckpt`.
pub fn encode_for(ckpt: &Checkpoint, samples: &[crate::tasks::Sample]) -> Result<Encoded> {
    let vocab = Vocabulary::from_tokens(ckpt.vocab.clone())?;
    vocab.encode(samples, ckpt.model_config.max_seq_len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub model_id: String,
    pub checkpoint_digest: String,
    /// One deterministic pass over the training split after training.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub manifest: SweepManifest,
    pub bundle: Option<ReportBundle>,
    /// Models trained by this invocation.
    pub trained: Vec<String>,
    /// Cells evaluated by this invocation.
    pub evaluated: usize,
    /// Cells already evaluated and left untouched.
    pub skipped: usize,
    pub failed: Vec<(String, String, String)>,
}

pub fn matrix_path(dir: &Path, model: &str, config: &str) -> PathBuf {
    dir.join("raw")
        .join(format!("{model}__{config}.matrix.jsonl"))
}

pub fn summary_path(dir: &Path, model: &str, config: &str) -> PathBuf {
    dir.join("raw")
        .join(format!("{model}__{config}.summary.json"))
}

pub fn checkpoint_path(dir: &Path, model: &str) -> PathBuf {
    dir.join("models").join(format!("{model}.ckpt"))
}

/// Writes `bytes` unless the file exists with identical contents; a file
/// with different contents is an error.
fn write_or_match(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.exists() {
        let existing = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if existing != bytes {
            return Err(Error::Validation(format!(
                "{} exists with different contents; the corpus or seed changed",
                path.display()
            )));
        }
        return Ok(());
    }
    write_atomic(path, bytes)
}

/// Runs (or resumes) a sweep under `root`. With `resume` false the sweep
/// directory must not already hold a manifest; with `resume` true the
/// manifest on disk is authoritative.
pub fn run_sweep(
    manifest: SweepManifest,
    root: &Path,
    resume: bool,
    progress: &mut dyn FnMut(&str),
) -> Result<SweepOutcome> {
    manifest.validate()?;
    let dir = root.join(&manifest.sweep_id);
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = if manifest_path.exists() {
        if !resume {
            return Err(Error::invalid(format!(
                "{} already exists; resume it or pick another sweep id",
                manifest_path.display()
            )));
        }
        progress(&format!("resuming {}", manifest_path.display()));
        SweepManifest::load(&manifest_path)?
    } else {
        manifest
    };

    let data = prepare_split(
        &manifest.corpus,
        manifest.train_fraction,
        manifest.seeds.data,
    )?;
    write_or_match(
        &dir.join("data/train.jsonl"),
        write_samples(&data.train)?.as_bytes(),
    )?;
    write_or_match(
        &dir.join("data/test.jsonl"),
        write_samples(&data.test)?.as_bytes(),
    )?;
    manifest.save(&manifest_path)?;
    progress(&format!(
        "{}: {} models × {} configs, {} train / {} test samples",
        manifest.sweep_id,
        manifest.models.len(),
        manifest.dropout_configs.len(),
        data.train.len(),
        data.test.len()
    ));

    let mut outcome = SweepOutcome {
        dir: dir.clone(),
        manifest: manifest.clone(),
        bundle: None,
        trained: Vec::new(),
        evaluated: 0,
        skipped: 0,
        failed: Vec::new(),
    };

    for spec in manifest.models.clone() {
        let cell_ids: Vec<usize> = (0..manifest.cells.len())
            .filter(|&i| manifest.cells[i].model == spec.id)
            .collect();
        let open: Vec<usize> = cell_ids
            .iter()
            .copied()
            .filter(|&i| manifest.cells[i].status != CellStatus::Evaluated)
            .collect();
        outcome.skipped += cell_ids.len() - open.len();
        if open.is_empty() {
            progress(&format!("{}: all cells evaluated, skipping", spec.id));
            continue;
        }
        let ckpt = match obtain_checkpoint(&spec, &manifest, &data, &dir, &cell_ids, progress) {
            Ok((ckpt, fresh)) => {
                if fresh {
                    outcome.trained.push(spec.id.clone());
                }
                ckpt
            }
            Err(e) => {
                for &i in &open {
                    mark_failed(&mut manifest.cells[i], &e, &mut outcome);
                }
                manifest.save(&manifest_path)?;
                progress(&format!("{}: training failed: {e}", spec.id));
                continue;
            }
        };
        let digest = ckpt.digest()?;
        for &i in &open {
            manifest.cells[i].status = CellStatus::Trained;
            manifest.cells[i].checkpoint_digest = Some(digest.clone());
            manifest.cells[i].error = None;
        }
        manifest.save(&manifest_path)?;
        let test = encode_for(&ckpt, &data.test)?;

        for &i in &open {
            let cell = manifest.cells[i].clone();
            match evaluate_cell(&manifest, &cell, &spec, &ckpt, &test, &dir) {
                Ok(line) => {
                    manifest.cells[i].status = CellStatus::Evaluated;
                    outcome.evaluated += 1;
                    progress(&line);
                }
                Err(e) => {
                    progress(&format!("{}/{}: failed: {e}", cell.model, cell.config));
                    mark_failed(&mut manifest.cells[i], &e, &mut outcome);
                }
            }
            manifest.save(&manifest_path)?;
        }
    }

    outcome.bundle = report_from_dir(&manifest, &dir)?;
    outcome.manifest = manifest;
    Ok(outcome)
}

fn mark_failed(cell: &mut Cell, e: &Error, outcome: &mut SweepOutcome) {
    cell.status = CellStatus::Failed;
    cell.error = Some(e.to_string());
    outcome
        .failed
        .push((cell.model.clone(), cell.config.clone(), e.to_string()));
}

/// Loads the stored checkpoint of a model (verifying its digest against any
/// cell that recorded one) or trains it. The flag is true when trained now.
fn obtain_checkpoint(
    spec: &ModelSpec,
    manifest: &SweepManifest,
    data: &DatasetSplit,
    dir: &Path,
    cell_ids: &[usize],
    progress: &mut dyn FnMut(&str),
) -> Result<(Checkpoint, bool)> {
    let path = checkpoint_path(dir, &spec.id);
    let recorded = cell_ids
        .iter()
        .find_map(|&i| manifest.cells[i].checkpoint_digest.clone());
    if path.exists() {
        let ckpt = Checkpoint::load(&path)?;
        let digest = ckpt.digest()?;
        if let Some(r) = recorded.filter(|r| *r != digest) {
            return Err(Error::Validation(format!(
                "{} has digest {digest}, manifest recorded {r}",
                path.display()
            )));
        }
        progress(&format!(
            "{}: reusing trained checkpoint {}",
            spec.id,
            &digest[..12]
        ));
        return Ok((ckpt, false));
    }
    if recorded.is_some() {
        return Err(Error::Validation(format!(
            "{} is missing but cells were already evaluated with it",
            path.display()
        )));
    }
    let vocab = Vocabulary::build(&data.train)?;
    let train_set = vocab.encode(&data.train, spec.max_seq_len)?;
    let test_set = vocab.encode(&data.test, spec.max_seq_len)?;
    progress(&format!(
        "{}: training on {} samples",
        spec.id,
        train_set.len()
    ));
    let init_seed = spec.init_seed.unwrap_or(manifest.seeds.init);
    let (ckpt, history) = train_model(spec, &vocab, &train_set, &manifest.train, init_seed)?;
    let record = TrainingRecord {
        model_id: spec.id.clone(),
        checkpoint_digest: ckpt.digest()?,
        train_accuracy: evaluate_plain(&ckpt, &train_set)?,
        test_accuracy: evaluate_plain(&ckpt, &test_set)?,
        final_loss: history.epochs.last().map_or(f64::NAN, |e| e.loss),
    };
    history.save(
        dir.join("models")
            .join(format!("{}.history.jsonl", spec.id)),
    )?;
    write_atomic(
        &dir.join("models").join(format!("{}.train.json", spec.id)),
        (serde_json::to_string_pretty(&record)? + "\n").as_bytes(),
    )?;
    ckpt.save(&path)?;
    progress(&format!(
        "{}: train accuracy {:.3}, test accuracy {:.3}",
        spec.id, record.train_accuracy, record.test_accuracy
    ));
    Ok((ckpt, true))
}

fn evaluate_cell(
    manifest: &SweepManifest,
    cell: &Cell,
    spec: &ModelSpec,
    ckpt: &Checkpoint,
    test: &Encoded,
    dir: &Path,
) -> Result<String> {
    let config = manifest
        .config(&cell.config)
        .ok_or_else(|| Error::Validation(format!("unknown config `{}`", cell.config)))?;
    let pm = mc_run(ckpt, test, config, manifest.passes, cell.mc_seed)?;
    pm.validate()?;
    let summary = summarize(&pm);
    let record = SummaryRecord {
        model_id: cell.model.clone(),
        family: Some(spec.family),
        config: config.clone(),
        summary,
    };
    pm.save(matrix_path(dir, &cell.model, &cell.config))?;
    write_atomic(
        &summary_path(dir, &cell.model, &cell.config),
        (serde_json::to_string_pretty(&record)? + "\n").as_bytes(),
    )?;
    Ok(format!(
        "{}/{}: mean {:.3} std {:.4} over {} passes",
        cell.model,
        cell.config,
        record.summary.mean_overall,
        record.summary.std_overall,
        manifest.passes
    ))
}

/// Summary records of every evaluated cell, in manifest order.
pub fn load_summaries(manifest: &SweepManifest, dir: &Path) -> Result<Vec<SummaryRecord>> {
    manifest
        .cells
        .iter()
        .filter(|c| c.status == CellStatus::Evaluated)
        .map(|c| {
            Ok(serde_json::from_str(&read_to_string(&summary_path(
                dir, &c.model, &c.config,
            ))?)?)
        })
        .collect()
}

/// Deterministic-vs-stochastic tests for every model with an evaluated
/// deterministic cell. The family size defaults to the number of tests.
pub fn sweep_comparisons(manifest: &SweepManifest, dir: &Path) -> Result<Vec<ComparisonResult>> {
    let mut per_model = Vec::new();
    for m in &manifest.models {
        let runs: Vec<_> = manifest
            .cells
            .iter()
            .filter(|c| c.model == m.id && c.status == CellStatus::Evaluated)
            .map(|c| -> Result<_> {
                let (pm, _) = PredictionMatrix::load(matrix_path(dir, &c.model, &c.config))?;
                Ok((pm.dropout.clone(), run_level_accuracy(&pm).overall))
            })
            .collect::<Result<_>>()?;
        if runs.len() >= 2
            && runs.iter().any(|(c, _)| c.name == "deterministic")
            && runs.iter().all(|(_, a)| a.len() >= 2)
        {
            per_model.push((m.id.clone(), runs));
        }
    }
    let tests: usize = per_model.iter().map(|(_, r)| r.len() - 1).sum();
    let family = manifest.family_size.unwrap_or(tests.max(1));
    let mut out = Vec::new();
    for (id, runs) in per_model {
        out.extend(within_model_comparisons(
            &id,
            &runs,
            family,
            manifest.alpha,
        )?);
    }
    Ok(out)
}

/// Builds and writes the report for whatever cells are evaluated; `None`
/// when nothing is.
pub fn report_from_dir(manifest: &SweepManifest, dir: &Path) -> Result<Option<ReportBundle>> {
    let summaries = load_summaries(manifest, dir)?;
    if summaries.is_empty() {
        return Ok(None);
    }
    let comparisons = sweep_comparisons(manifest, dir)?;
    write_atomic(
        &dir.join("raw/comparisons.jsonl"),
        to_jsonl(&comparisons)?.as_bytes(),
    )?;
    let bundle = ReportBundle::build(
        &manifest.sweep_id,
        &manifest.created_at,
        summaries,
        comparisons,
        crate::report::DEFAULT_TOP_K,
        manifest.alpha,
    )?;
    bundle.write(dir)?;
    Ok(Some(bundle))
}

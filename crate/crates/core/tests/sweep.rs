use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dropprof::mc_eval::PredictionMatrix;
use dropprof::model::{DropoutConfig, Family};
use dropprof::sweep::{
    checkpoint_path, matrix_path, run_sweep, CellStatus, CorpusSource, ModelSpec, Seeds,
    SweepManifest, MANIFEST_FILE,
};

fn tiny(id: &str, family: Family) -> ModelSpec {
    ModelSpec {
        id: id.into(),
        family,
        layers: 1,
        heads: 2,
        d_model: 16,
        d_ffn: 32,
        max_seq_len: 12,
        init_std: Some(0.25),
        pooling: None,
        init_seed: None,
    }
}

fn manifest() -> SweepManifest {
    let mut m = SweepManifest::new(
        "tiny",
        "2024-01-01T00:00:00Z",
        vec![tiny("enc", Family::Encoder), tiny("dec", Family::Decoder)],
        DropoutConfig::presets(),
        4,
        Seeds::all(7),
    )
    .unwrap();
    m.corpus = CorpusSource::Synthetic {
        memory: 40,
        reasoning: 40,
    };
    m.train.epochs = 2;
    m
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["raw", "models", "tables", "figures", "data"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            out.insert(
                p.strip_prefix(dir).unwrap().display().to_string(),
                fs::read(&p).unwrap(),
            );
        }
    }
    out
}

#[test]
fn two_models_five_configs_share_one_training_each() {
    let root = tempfile::tempdir().unwrap();
    let out = run_sweep(manifest(), root.path(), false, &mut |_| {}).unwrap();
    assert_eq!(out.manifest.cell_count(), 10);
    assert_eq!(out.trained, ["enc", "dec"]);
    assert_eq!(out.evaluated, 10);
    assert!(out.failed.is_empty());
    for model in ["enc", "dec"] {
        let digests: Vec<_> = out
            .manifest
            .cells
            .iter()
            .filter(|c| c.model == model)
            .map(|c| c.checkpoint_digest.clone().unwrap())
            .collect();
        assert!(digests.windows(2).all(|w| w[0] == w[1]));
        for c in DropoutConfig::presets() {
            let (pm, warnings) =
                PredictionMatrix::load(matrix_path(&out.dir, model, &c.name)).unwrap();
            assert!(warnings.is_empty());
            pm.validate().unwrap();
            assert_eq!(pm.checkpoint_digest, digests[0]);
            assert_eq!(pm.passes(), 4);
        }
    }
    let bundle = out.bundle.unwrap();
    assert_eq!(bundle.summaries.len(), 10);
    for f in [
        "tables/top_models.csv",
        "tables/config_effects.txt",
        "figures/overall.svg",
        "figures/memory.svg",
        "raw/comparisons.jsonl",
    ] {
        assert!(out.dir.join(f).exists(), "{f}");
    }
    // Re-running without resume refuses to touch the directory.
    assert!(run_sweep(manifest(), root.path(), false, &mut |_| {}).is_err());
}

#[test]
fn resume_after_kill_skips_finished_cells() {
    let root = tempfile::tempdir().unwrap();
    let out = run_sweep(manifest(), root.path(), false, &mut |_| {}).unwrap();
    let dir = out.dir.clone();
    let complete = snapshot(&dir);

    // Rewind to the state after the third cell: enc cells 1-3 evaluated,
    // enc trained, dec untouched.
    let mut m = SweepManifest::load(dir.join(MANIFEST_FILE)).unwrap();
    for (i, c) in m.cells.iter_mut().enumerate() {
        if i >= 3 {
            let _ = fs::remove_file(matrix_path(&dir, &c.model, &c.config));
            let _ = fs::remove_file(
                dir.join("raw")
                    .join(format!("{}__{}.summary.json", c.model, c.config)),
            );
            c.status = if c.model == "enc" {
                CellStatus::Trained
            } else {
                CellStatus::Pending
            };
            if c.model == "dec" {
                c.checkpoint_digest = None;
            }
        }
    }
    m.save(dir.join(MANIFEST_FILE)).unwrap();
    fs::remove_file(checkpoint_path(&dir, "dec")).unwrap();
    fs::remove_dir_all(dir.join("tables")).unwrap();
    fs::create_dir(dir.join("tables")).unwrap();
    let kept: Vec<_> = m.cells[..3]
        .iter()
        .map(|c| {
            fs::metadata(matrix_path(&dir, &c.model, &c.config))
                .unwrap()
                .modified()
                .unwrap()
        })
        .collect();

    let mut log = Vec::new();
    let again = run_sweep(manifest(), root.path(), true, &mut |l| {
        log.push(l.to_owned())
    })
    .unwrap();
    assert_eq!(again.skipped, 3);
    assert_eq!(again.evaluated, 7);
    assert_eq!(again.trained, ["dec"]);
    assert!(log
        .iter()
        .any(|l| l.starts_with("enc: reusing trained checkpoint")));
    for (c, t) in again.manifest.cells[..3].iter().zip(kept) {
        assert_eq!(
            fs::metadata(matrix_path(&dir, &c.model, &c.config))
                .unwrap()
                .modified()
                .unwrap(),
            t
        );
    }
    assert_eq!(snapshot(&dir), complete);

    // A fully evaluated sweep resumes as a no-op.
    let idle = run_sweep(manifest(), root.path(), true, &mut |_| {}).unwrap();
    assert_eq!((idle.skipped, idle.evaluated), (10, 0));
    assert_eq!(snapshot(&dir), complete);
}

#[test]
fn unresolvable_corpus_aborts_before_training() {
    let root = tempfile::tempdir().unwrap();
    let mut m = manifest();
    m.corpus = CorpusSource::Ingest {
        path: root.path().join("missing.jsonl"),
    };
    assert!(run_sweep(m, root.path(), false, &mut |_| {}).is_err());
    assert!(!root.path().join("tiny/models").exists());
}

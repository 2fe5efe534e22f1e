use std::fs;
use std::path::Path;

use std::process::{Command, Output};

use serde_json::Value;

fn dropprof() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dropprof"))
}

trait Run {
    fn ok(&mut self) -> Output;
    fn fails(&mut self) -> Output;
}

impl Run for Command {
    fn ok(&mut self) -> Output {
        let out = self.output().unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn fails(&mut self) -> Output {
        let out = self.output().unwrap();
        assert!(
            !out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stdout)
        );
        out
    }
}

/// Data, a tiny checkpoint and two matrices in `dir`.
fn fixture(dir: &Path) {
    let d = |p: &str| dir.join(p).display().to_string();
    dropprof()
        .args([
            "generate-data",
            "--memory",
            "30",
            "--reasoning",
            "30",
            "--out",
            &d("data"),
        ])
        .ok();
    dropprof()
        .args([
            "train",
            "--data",
            &d("data"),
            "--out",
            &d("m.ckpt"),
            "--layers",
            "1",
            "--heads",
            "2",
        ])
        .args(["--d-model", "16", "--d-ffn", "32", "--epochs", "1"])
        .ok();
    for config in ["deterministic", "baseline", "high_both"] {
        dropprof()
            .args([
                "mc-eval",
                "--checkpoint",
                &d("m.ckpt"),
                "--test",
                &d("data/test.jsonl"),
                "--passes",
                "6",
            ])
            .args([
                "--config",
                config,
                "--out",
                &d(&format!("m__{config}.jsonl")),
            ])
            .ok();
    }
}

fn verify(dir: &Path) -> Command {
    let d = |p: &str| dir.join(p).display().to_string();
    let mut c = dropprof();
    c.args([
        "verify",
        "--matrix",
        &d("m__baseline.jsonl"),
        "--checkpoint",
        &d("m.ckpt"),
        "--test",
        &d("data/test.jsonl"),
    ]);
    c
}

#[test]
fn verify_passes_then_catches_a_flipped_prediction() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    verify(dir.path()).ok();

    let path = dir.path().join("m__baseline.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    // Pass records follow the header and sample records; flip sample 2 of pass 3.
    let idx = lines.iter().position(|l| l.contains("\"pass\":3")).unwrap();
    let mut rec: Value = serde_json::from_str(&lines[idx]).unwrap();
    let preds = rec["predictions"].as_str().unwrap().to_owned();
    let flipped: String = preds
        .chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 2 {
                if c == '0' {
                    '1'
                } else {
                    '0'
                }
            } else {
                c
            }
        })
        .collect();
    rec["predictions"] = Value::String(flipped);
    lines[idx] = serde_json::to_string(&rec).unwrap();
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = verify(dir.path()).fails().stdout;
    let out = String::from_utf8(out).unwrap();
    assert!(out.contains("pass 3") && out.contains("sample 2"), "{out}");
    assert!(out.contains("1 mismatching cells"), "{out}");
}

#[test]
fn stats_uses_the_requested_family_size() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let out = dir.path().join("cmp.jsonl");
    dropprof()
        .arg("stats")
        .args(
            [
                "m__deterministic.jsonl",
                "m__baseline.jsonl",
                "m__high_both.jsonl",
            ]
            .map(|f| dir.path().join(f)),
        )
        .args(["--family-size", "15", "--out"])
        .arg(&out)
        .ok();
    let records: Vec<Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let tests: Vec<&Value> = records
        .iter()
        .filter(|r| r.get("p_raw").is_some())
        .collect();
    assert_eq!(tests.len(), 2);
    for t in tests {
        assert_eq!(t["family_size"], 15);
        assert_eq!(t["alpha_adjusted"].as_f64().unwrap(), 0.05 / 15.0);
        assert_eq!(t["label_a"], "m/deterministic");
    }
    assert_eq!(records.len(), 5);
}

#[test]
fn usage_errors_exit_nonzero() {
    assert_eq!(dropprof().arg("--bogus").fails().status.code(), Some(2));
    dropprof().args(["mc-eval", "--passes", "ten"]).fails();
    dropprof().args(["stats"]).fails();
    dropprof()
        .args([
            "sweep",
            "--configs",
            "nonsense",
            "--out",
            "/nonexistent-dir",
        ])
        .fails();
}

#[test]
fn sweep_then_report_audits_clean() {
    let dir = tempfile::tempdir().unwrap();
    dropprof()
        .args([
            "sweep",
            "--sweep-id",
            "s",
            "--models",
            "a:encoder:1:2:16:32,b:decoder:1:2:16:32",
        ])
        .args([
            "--configs",
            "deterministic,baseline",
            "--passes",
            "3",
            "--epochs",
            "1",
        ])
        .args(["--memory", "20", "--reasoning", "20"])
        .env("DROPPROF_OUT", dir.path())
        .ok();
    let sweep = dir.path().join("s");
    assert!(sweep.join("tables/top_models.txt").exists());
    dropprof()
        .args(["report", "--timestamp", "2024-01-01T00:00:00Z", "--sweep"])
        .arg(&sweep)
        .ok();
    let txt = fs::read_to_string(sweep.join("tables/top_models.txt")).unwrap();
    assert!(txt.contains("2024-01-01T00:00:00Z"), "{txt}");
    // Without --resume an existing sweep is left alone.
    dropprof()
        .args([
            "sweep",
            "--sweep-id",
            "s",
            "--models",
            "a:encoder:1:2:16:32",
            "--out",
        ])
        .arg(dir.path())
        .fails();
}

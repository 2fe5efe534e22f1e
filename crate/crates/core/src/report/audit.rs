//! Traceability audit: re-derives every rendered number from the bundle's
//! raw summary and comparison records and reports any cell that disagrees.
//!
//! The audit reads the rendered text back rather than trusting the table
//! builders, and recomputes aggregates (degradations, per-configuration
//! means, census counts, quartile tests) from the summaries.

use std::collections::BTreeMap;

use super::svg::{bar_height, parse_bars};
use super::tables::{comparison_row, fmt_acc, fmt_fraction, fmt_signed, fmt_std, split_txt_row};
use super::{Document, ReportBundle, SERIES};
use crate::mc_eval::RunSummary;
use crate::stats::tables::Measure;
use crate::stats::{compare, ComparisonResult, SummaryRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditFinding {
    pub path: String,
    pub detail: String,
}

struct Auditor<'a> {
    bundle: &'a ReportBundle,
    findings: Vec<AuditFinding>,
}

impl Auditor<'_> {
    fn fail(&mut self, path: &str, detail: String) {
        self.findings.push(AuditFinding {
            path: path.to_owned(),
            detail,
        });
    }

    fn summary(&self, model: &str, config: &str) -> Option<&RunSummary> {
        self.bundle
            .summaries
            .iter()
            .find(|s| s.model_id == model && s.config.name == config)
            .map(|s| &s.summary)
    }

    fn expect_row(&mut self, path: &str, row: &[String], expected: &[String]) {
        if row != expected {
            self.fail(
                path,
                format!("row {row:?} does not re-derive (expected {expected:?})"),
            );
        }
    }
}

fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "n/a".into())
}

fn csv_rows(text: &str) -> Option<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records()
        .map(|rec| rec.ok().map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect()
}

/// Data rows of an aligned table: after title, blank, header and rule lines,
/// up to the first blank line.
fn txt_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(4)
        .take_while(|l| !l.trim().is_empty())
        .map(split_txt_row)
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Returns every disagreement between `docs` and `bundle`; empty means the
/// report is fully traceable.
pub fn audit(bundle: &ReportBundle, docs: &[Document]) -> Vec<AuditFinding> {
    let mut a = Auditor {
        bundle,
        findings: Vec::new(),
    };
    let by_path: BTreeMap<&str, &str> = docs
        .iter()
        .map(|d| (d.path.as_str(), d.contents.as_str()))
        .collect();

    for t in bundle.tables() {
        let csv_path = format!("tables/{}.csv", t.name);
        let txt_path = format!("tables/{}.txt", t.name);
        let (Some(csv_text), Some(txt_text)) = (
            by_path.get(csv_path.as_str()),
            by_path.get(txt_path.as_str()),
        ) else {
            a.fail(&csv_path, "table missing from the rendered set".into());
            continue;
        };
        let Some(rows) = csv_rows(csv_text) else {
            a.fail(&csv_path, "unreadable csv".into());
            continue;
        };
        if txt_rows(txt_text) != rows {
            a.fail(&txt_path, "aligned rows differ from the csv rows".into());
        }
        match t.name.as_str() {
            "top_models" => audit_top(&mut a, &csv_path, &rows),
            "degradation" => audit_degradation(&mut a, &csv_path, &txt_path, txt_text, &rows),
            "config_effects" => audit_config_effects(&mut a, &csv_path, &rows),
            "memory_bias" => audit_census(&mut a, &csv_path, &rows),
            "comparisons" => audit_comparisons(&mut a, &csv_path, &rows),
            other => a.fail(&csv_path, format!("no audit rule for table `{other}`")),
        }
    }
    for d in docs.iter().filter(|d| d.path.ends_with(".svg")) {
        audit_figure(&mut a, &d.path, &d.contents);
    }
    a.findings
}

fn audit_top(a: &mut Auditor<'_>, path: &str, rows: &[Vec<String>]) {
    let config = a.bundle.top_config.clone();
    let mut previous = f64::INFINITY;
    for row in rows {
        let Some(s) = a.summary(&row[0], &config).cloned() else {
            a.fail(
                path,
                format!("model `{}` has no `{config}` summary", row[0]),
            );
            continue;
        };
        let expected = vec![
            row[0].clone(),
            fmt_acc(s.mean_overall),
            opt(s.mean_memory, fmt_acc),
            opt(s.mean_reasoning, fmt_acc),
            fmt_std(s.std_overall),
            opt(s.std_memory, fmt_std),
            opt(s.std_reasoning, fmt_std),
            opt(
                s.mean_memory.zip(s.mean_reasoning).map(|(m, r)| m - r),
                fmt_signed,
            ),
        ];
        a.expect_row(path, row, &expected);
        if s.mean_overall > previous {
            a.fail(path, format!("`{}` is out of order", row[0]));
        }
        previous = s.mean_overall;
    }
    let available = a
        .bundle
        .summaries
        .iter()
        .filter(|s| s.config.name == config)
        .count();
    if rows.is_empty() || rows.len() > available {
        a.fail(path, format!("{} rows for {available} models", rows.len()));
    }
}

fn audit_degradation(
    a: &mut Auditor<'_>,
    path: &str,
    txt_path: &str,
    txt: &str,
    rows: &[Vec<String>],
) {
    let mut models: Vec<&str> = a
        .bundle
        .summaries
        .iter()
        .map(|s| s.model_id.as_str())
        .collect();
    models.sort();
    models.dedup();
    let paired: Vec<(String, f64)> = models
        .iter()
        .filter_map(|m| {
            Some((
                m.to_string(),
                a.summary(m, "baseline")?.mean_overall
                    - a.summary(m, "deterministic")?.mean_overall,
            ))
        })
        .collect();
    if rows.len() != paired.len() {
        a.fail(
            path,
            format!(
                "{} rows but {} models have both summaries",
                rows.len(),
                paired.len()
            ),
        );
    }
    let mut previous = f64::NEG_INFINITY;
    for row in rows {
        let (Some(d), Some(b)) = (
            a.summary(&row[0], "deterministic").cloned(),
            a.summary(&row[0], "baseline").cloned(),
        ) else {
            a.fail(path, format!("model `{}` lacks a summary", row[0]));
            continue;
        };
        let deg = b.mean_overall - d.mean_overall;
        let expected = vec![
            row[0].clone(),
            fmt_acc(d.mean_overall),
            fmt_std(d.std_overall),
            fmt_acc(b.mean_overall),
            fmt_std(b.std_overall),
            fmt_signed(deg),
        ];
        a.expect_row(path, row, &expected);
        if deg < previous {
            a.fail(path, format!("`{}` is out of order", row[0]));
        }
        previous = deg;
    }
    let negative = paired.iter().filter(|(_, d)| *d < 0.0).count();
    let frac = if paired.is_empty() {
        0.0
    } else {
        negative as f64 / paired.len() as f64
    };
    let footer = format!(
        "Deterministic better in {negative} of {} models ({}).",
        paired.len(),
        fmt_fraction(frac)
    );
    if !txt.lines().any(|l| l == footer) {
        a.fail(
            txt_path,
            format!("footer does not re-derive (expected `{footer}`)"),
        );
    }
}

fn at_config<'a>(bundle: &'a ReportBundle, label: &str) -> Vec<&'a SummaryRecord> {
    bundle
        .summaries
        .iter()
        .filter(|s| s.config.display_label() == label || s.config.name == label)
        .collect()
}

fn audit_config_effects(a: &mut Auditor<'_>, path: &str, rows: &[Vec<String>]) {
    for row in rows {
        let complete: Vec<(f64, f64)> = at_config(a.bundle, &row[0])
            .iter()
            .filter_map(|s| s.summary.mean_memory.zip(s.summary.mean_reasoning))
            .collect();
        if complete.is_empty() {
            a.fail(
                path,
                format!("configuration `{}` has no complete summary", row[0]),
            );
            continue;
        }
        let m = mean(&complete.iter().map(|c| c.0).collect::<Vec<_>>());
        let r = mean(&complete.iter().map(|c| c.1).collect::<Vec<_>>());
        let expected = vec![
            row[0].clone(),
            fmt_acc(m),
            fmt_acc(r),
            fmt_signed(m - r),
            complete.len().to_string(),
        ];
        a.expect_row(path, row, &expected);
    }
}

fn audit_census(a: &mut Auditor<'_>, path: &str, rows: &[Vec<String>]) {
    for row in rows {
        let deltas: Vec<f64> = at_config(a.bundle, &row[0])
            .iter()
            .filter_map(|s| {
                s.summary
                    .mean_memory
                    .zip(s.summary.mean_reasoning)
                    .map(|(m, r)| m - r)
            })
            .collect();
        if deltas.is_empty() {
            a.fail(
                path,
                format!("configuration `{}` has no complete summary", row[0]),
            );
            continue;
        }
        let positive = deltas.iter().filter(|&&d| d > 0.0).count();
        let expected = vec![
            row[0].clone(),
            deltas.len().to_string(),
            positive.to_string(),
            fmt_fraction(positive as f64 / deltas.len() as f64),
            fmt_signed(mean(&deltas)),
        ];
        a.expect_row(path, row, &expected);
    }
}

/// Stability tests recomputed from the summaries at each reported
/// configuration.
fn quartile_tests(a: &Auditor<'_>) -> Vec<ComparisonResult> {
    let mut out = Vec::new();
    for s in &a.bundle.stability {
        let mut at: Vec<&SummaryRecord> = a
            .bundle
            .summaries
            .iter()
            .filter(|r| r.config.name == s.config)
            .collect();
        at.sort_by(|x, y| {
            x.summary
                .std_overall
                .total_cmp(&y.summary.std_overall)
                .then_with(|| x.model_id.cmp(&y.model_id))
        });
        let q = at.len() / 4;
        if q < 2 {
            continue;
        }
        let measures: [(&str, Measure); 3] = [
            ("overall", |s| Some(s.mean_overall)),
            ("memory", |s| s.mean_memory),
            ("reasoning", |s| s.mean_reasoning),
        ];
        for (name, get) in measures {
            let lo: Option<Vec<f64>> = at[..q].iter().map(|r| get(&r.summary)).collect();
            let hi: Option<Vec<f64>> = at[at.len() - q..].iter().map(|r| get(&r.summary)).collect();
            if let (Some(lo), Some(hi)) = (lo, hi) {
                if let Ok(c) = compare(
                    &format!("most_stable/{name}"),
                    &lo,
                    &format!("least_stable/{name}"),
                    &hi,
                    3,
                    s.comparisons.first().map_or(0.05, |c| c.alpha),
                ) {
                    out.push(c);
                }
            }
        }
    }
    out
}

fn audit_comparisons(a: &mut Auditor<'_>, path: &str, rows: &[Vec<String>]) {
    let mut expected: Vec<Vec<String>> = a.bundle.comparisons.iter().map(comparison_row).collect();
    expected.extend(quartile_tests(a).iter().map(comparison_row));
    if rows.len() != expected.len() {
        a.fail(
            path,
            format!("{} rows, expected {}", rows.len(), expected.len()),
        );
    }
    for (row, exp) in rows.iter().zip(&expected) {
        a.expect_row(path, row, exp);
    }
}

fn audit_figure(a: &mut Auditor<'_>, path: &str, svg: &str) {
    let metric = path.trim_start_matches("figures/").trim_end_matches(".svg");
    let bars = parse_bars(svg);
    if bars.is_empty() {
        a.fail(path, "figure has no bars".into());
    }
    for (model, series, mean, std, height) in bars {
        let config = if series == SERIES[0].0 {
            "deterministic"
        } else {
            "baseline"
        };
        let Some(s) = a.summary(&model, config).cloned() else {
            a.fail(path, format!("bar `{model}`/`{series}` has no summary"));
            continue;
        };
        let source = match metric {
            "overall" => Some((s.mean_overall, s.std_overall)),
            "memory" => s.mean_memory.zip(s.std_memory),
            "reasoning" => s.mean_reasoning.zip(s.std_reasoning),
            _ => None,
        };
        match source {
            Some((m, sd)) if m == mean && sd == std => {
                if format!("{height:.2}") != format!("{:.2}", bar_height(m)) {
                    a.fail(
                        path,
                        format!("bar `{model}`/`{series}` height {height} does not match mean {m}"),
                    );
                }
            }
            _ => a.fail(
                path,
                format!("bar `{model}`/`{series}` value {mean}±{std} does not re-derive"),
            ),
        }
        let data_line = format!("{model},{series},{mean},{std}");
        if !svg.lines().any(|l| l == data_line) {
            a.fail(path, format!("data comment lacks `{data_line}`"));
        }
    }
}

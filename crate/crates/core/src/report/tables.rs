//! Table documents in two renderings: comma-separated and aligned text.
//! Both carry identical cell strings.

use crate::error::Result;
use crate::stats::ComparisonResult;

use super::ReportBundle;

/// Accuracies: 3 decimals.
pub fn fmt_acc(v: f64) -> String {
    format!("{v:.3}")
}

/// Standard deviations: 4 decimals.
pub fn fmt_std(v: f64) -> String {
    format!("{v:.4}")
}

/// Signed differences (gaps, degradation, Δ_cog), 3 decimals.
pub fn fmt_signed(v: f64) -> String {
    let s = format!("{v:+.3}");
    // Keep "+0.000" for values that round to zero from below.
    if s == "-0.000" {
        "+0.000".to_owned()
    } else {
        s
    }
}

/// Test statistics, effect sizes and df.
pub fn fmt_stat(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{v:.3}")
    }
}

pub fn fmt_p(v: f64) -> String {
    format!("{v:.3e}")
}

pub fn fmt_fraction(v: f64) -> String {
    format!("{v:.3}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem under `tables/`.
    pub name: String,
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Summary lines appended under the aligned rendering only.
    pub footer: Vec<String>,
}

impl Table {
    fn new(name: &str, title: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_owned(),
            title: title.to_owned(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            footer: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| crate::Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Columns separated by at least two spaces; text cells left-aligned,
    /// numeric cells right-aligned.
    pub fn to_txt(&self) -> String {
        let n = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let numeric = |c: usize| c > 0 || self.rows.iter().all(|r| is_numeric(&r[0]));
        let line = |cells: &[String]| {
            let parts: Vec<String> = (0..n)
                .map(|c| {
                    if numeric(c) {
                        format!("{:>w$}", cells[c], w = widths[c])
                    } else {
                        format!("{:<w$}", cells[c], w = widths[c])
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_owned()
        };
        let mut out = format!("{}\n\n", self.title);
        let head = line(&self.header);
        out.push_str(&head);
        out.push('\n');
        out.push_str(&"-".repeat(head.chars().count()));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        if !self.footer.is_empty() {
            out.push('\n');
            for f in &self.footer {
                out.push_str(f);
                out.push('\n');
            }
        }
        out
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Validation(format!("csv: {e}"))
}

fn is_numeric(s: &str) -> bool {
    s.parse::<f64>().is_ok()
}

pub(super) fn top_table(b: &ReportBundle) -> Table {
    let mut t = Table::new(
        "top_models",
        &format!(
            "Top {} models ({} configuration)",
            b.top_table.len(),
            b.top_config
        ),
        &[
            "Model",
            "Overall Acc",
            "Memory Acc",
            "Reasoning Acc",
            "Overall Std",
            "Memory Std",
            "Reasoning Std",
            "Delta",
        ],
    );
    let opt = |v: Option<f64>, f: fn(f64) -> String| v.map(f).unwrap_or_else(|| "n/a".into());
    for r in &b.top_table {
        let s = &r.summary;
        t.rows.push(vec![
            r.model_id.clone(),
            fmt_acc(s.mean_overall),
            opt(s.mean_memory, fmt_acc),
            opt(s.mean_reasoning, fmt_acc),
            fmt_std(s.std_overall),
            opt(s.std_memory, fmt_std),
            opt(s.std_reasoning, fmt_std),
            opt(s.delta_cog, fmt_signed),
        ]);
    }
    t
}

pub(super) fn degradation_table(b: &ReportBundle) -> Table {
    let d = &b.degradation;
    let mut t = Table::new(
        "degradation",
        "Deterministic inference against baseline MC dropout (overall accuracy)",
        &[
            "Model",
            "Det Mean",
            "Det Std",
            "MC Mean",
            "MC Std",
            "Degradation",
        ],
    );
    for e in &d.entries {
        t.rows.push(vec![
            e.model_id.clone(),
            fmt_acc(e.deterministic_mean),
            fmt_std(e.deterministic_std),
            fmt_acc(e.baseline_mean),
            fmt_std(e.baseline_std),
            fmt_signed(e.degradation),
        ]);
    }
    t.footer.push(format!(
        "Deterministic better in {} of {} models ({}).",
        d.negative,
        d.total,
        fmt_fraction(d.fraction_negative)
    ));
    t.footer
        .extend(d.warnings.iter().map(|w| format!("warning: {w}")));
    t
}

pub(super) fn config_effect_table(b: &ReportBundle) -> Table {
    let mut t = Table::new(
        "config_effects",
        "Dropout configuration effects (mean over models)",
        &[
            "Configuration",
            "Memory Acc",
            "Reasoning Acc",
            "Gap",
            "Models",
        ],
    );
    for c in &b.config_effects {
        t.rows.push(vec![
            c.config.display_label(),
            fmt_acc(c.mean_memory),
            fmt_acc(c.mean_reasoning),
            fmt_signed(c.gap),
            c.models.to_string(),
        ]);
    }
    t
}

pub(super) fn bias_census_table(b: &ReportBundle) -> Table {
    let mut t = Table::new(
        "memory_bias",
        "Memory-biased models (positive memory minus reasoning differential)",
        &[
            "Configuration",
            "Models",
            "Positive",
            "Fraction",
            "Mean Delta",
        ],
    );
    for c in &b.bias_census {
        t.rows.push(vec![
            c.config.clone(),
            c.models.to_string(),
            c.positive.to_string(),
            fmt_fraction(c.fraction_positive),
            fmt_signed(c.mean_delta),
        ]);
    }
    t
}

pub(super) fn comparison_table(b: &ReportBundle) -> Table {
    let mut t = Table::new(
        "comparisons",
        "Hypothesis tests (Welch t, Bonferroni corrected)",
        &[
            "A",
            "B",
            "Diff",
            "t",
            "df",
            "p",
            "p adj",
            "alpha adj",
            "Cohen d",
            "Significant",
        ],
    );
    for c in &b.comparisons {
        t.rows.push(comparison_row(c));
    }
    for s in &b.stability {
        t.rows.extend(s.comparisons.iter().map(comparison_row));
        t.footer.push(format!(
            "Stability quartiles at {}: size {}, most stable [{}], least stable [{}].",
            s.config,
            s.quartile_size,
            s.most_stable.join(", "),
            s.least_stable.join(", ")
        ));
        t.footer
            .extend(s.notes.iter().map(|n| format!("note: {n}")));
    }
    t
}

pub(super) fn comparison_row(c: &ComparisonResult) -> Vec<String> {
    vec![
        c.label_a.clone(),
        c.label_b.clone(),
        fmt_signed(c.mean_diff),
        fmt_stat(c.t_stat),
        fmt_stat(c.df),
        fmt_p(c.p_raw),
        fmt_p(c.p_adjusted),
        fmt_p(c.alpha_adjusted),
        fmt_stat(c.cohens_d),
        if c.significant { "yes" } else { "no" }.to_owned(),
    ]
}

/// Splits an aligned-text row back into cells.
pub fn split_txt_row(line: &str) -> Vec<String> {
    line.split("  ")
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(str::to_owned)
        .collect()
}

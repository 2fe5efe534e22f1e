//! Sweep reports: a self-contained bundle of summary records and derived
//! statistics, rendered as tables (aligned text and CSV) and SVG bar charts.
//!
//! Rendering is a pure function of the bundle. The timestamp is part of the
//! bundle, never read from the clock here.

mod audit;
mod svg;
mod tables;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::stats::{
    self, BiasCensus, ComparisonResult, ConfigEffect, DegradationTable, StabilityReport,
    SummaryRecord,
};

pub use audit::{audit, AuditFinding};
pub use svg::{bar_height, grouped_bar_chart, parse_bars, Bar, BarGroup, Svg};
pub use tables::{
    fmt_acc, fmt_fraction, fmt_p, fmt_signed, fmt_stat, fmt_std, split_txt_row, Table,
};

pub const DEFAULT_TOP_K: usize = 5;
pub const FIGURE_MODELS: usize = 5;
pub const BUNDLE_FILE: &str = "raw/bundle.json";

/// Series colours of the deterministic/MC bar pairs.
pub const SERIES: [(&str, &str); 2] = [("Deterministic", "#1f77b4"), ("Baseline MC", "#ff7f0e")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub sweep_id: String,
    /// Supplied by the caller, so re-rendering is byte-identical.
    pub generated_at: String,
    pub summaries: Vec<SummaryRecord>,
    pub comparisons: Vec<ComparisonResult>,
    pub top_config: String,
    pub top_table: Vec<SummaryRecord>,
    pub degradation: DegradationTable,
    pub config_effects: Vec<ConfigEffect>,
    pub bias_census: Vec<BiasCensus>,
    pub stability: Vec<StabilityReport>,
}

/// A rendered file, path relative to the sweep directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub path: String,
    pub contents: String,
}

impl ReportBundle {
    /// Derives every table from `summaries`. The top table, bias census and
    /// stability quartiles use `top_config` (baseline when present); the
    /// census and quartiles are repeated for every configuration with
    /// enough models.
    pub fn build(
        sweep_id: &str,
        generated_at: &str,
        summaries: Vec<SummaryRecord>,
        comparisons: Vec<ComparisonResult>,
        top_k: usize,
        alpha: f64,
    ) -> Result<Self> {
        if summaries.is_empty() {
            return Err(Error::invalid("a report needs at least one summary"));
        }
        let top_config = if summaries.iter().any(|s| s.config.name == "baseline") {
            "baseline".to_owned()
        } else {
            summaries[0].config.name.clone()
        };
        let mut top_table: Vec<SummaryRecord> = summaries
            .iter()
            .filter(|s| s.config.name == top_config)
            .cloned()
            .collect();
        top_table.sort_by(|a, b| {
            b.summary
                .mean_overall
                .total_cmp(&a.summary.mean_overall)
                .then_with(|| a.model_id.cmp(&b.model_id))
        });
        top_table.truncate(top_k.max(1));

        let config_effects = stats::config_effect_table(&summaries)?;
        let mut bias_census = Vec::new();
        let mut stability = Vec::new();
        for effect in &config_effects {
            let at: Vec<SummaryRecord> = summaries
                .iter()
                .filter(|s| s.config.name == effect.config.name)
                .cloned()
                .collect();
            bias_census.push(stats::memory_bias_census(&at)?);
            if at.len() >= 4 {
                stability.push(stats::stability_quartiles(&at, alpha)?);
            }
        }
        Ok(Self {
            sweep_id: sweep_id.to_owned(),
            generated_at: generated_at.to_owned(),
            degradation: stats::degradation_table(&summaries)?,
            summaries,
            comparisons,
            top_config,
            top_table,
            config_effects,
            bias_census,
            stability,
        })
    }

    pub fn tables(&self) -> Vec<Table> {
        vec![
            tables::top_table(self),
            tables::degradation_table(self),
            tables::config_effect_table(self),
            tables::bias_census_table(self),
            tables::comparison_table(self),
        ]
    }

    /// Overall, memory and reasoning charts: deterministic against baseline
    /// MC for the models with the largest degradation.
    pub fn figures(&self) -> Vec<Document> {
        let models: Vec<&str> = self
            .degradation
            .entries
            .iter()
            .take(FIGURE_MODELS)
            .map(|e| e.model_id.as_str())
            .collect();
        let lookup = |model: &str, config: &str| {
            self.summaries
                .iter()
                .find(|s| s.model_id == model && s.config.name == config)
                .map(|s| &s.summary)
        };
        type Metric = fn(&crate::mc_eval::RunSummary) -> Option<(f64, f64)>;
        let metrics: [(&str, &str, Metric); 3] = [
            ("overall", "Overall accuracy", |s| {
                Some((s.mean_overall, s.std_overall))
            }),
            ("memory", "Memory accuracy", |s| {
                s.mean_memory.zip(s.std_memory)
            }),
            ("reasoning", "Reasoning accuracy", |s| {
                s.mean_reasoning.zip(s.std_reasoning)
            }),
        ];
        metrics
            .iter()
            .map(|(name, title, get)| {
                let groups: Vec<BarGroup> = models
                    .iter()
                    .map(|m| BarGroup {
                        label: m.to_string(),
                        bars: [("deterministic", SERIES[0].0), ("baseline", SERIES[1].0)]
                            .iter()
                            .filter_map(|(config, series)| {
                                lookup(m, config).and_then(get).map(|(mean, std)| Bar {
                                    series: series.to_string(),
                                    mean,
                                    std,
                                })
                            })
                            .collect(),
                    })
                    .collect();
                let title = format!(
                    "{title}: deterministic vs baseline MC dropout ({})",
                    self.sweep_id
                );
                Document {
                    path: format!("figures/{name}.svg"),
                    contents: grouped_bar_chart(
                        &title,
                        "Accuracy (error bars: std over passes)",
                        &SERIES,
                        &groups,
                    ),
                }
            })
            .collect()
    }

    /// Every output file, in a fixed order.
    pub fn render(&self) -> Result<Vec<Document>> {
        let mut docs = Vec::new();
        for t in self.tables() {
            docs.push(Document {
                path: format!("tables/{}.txt", t.name),
                contents: format!("{}\ngenerated {}\n", t.to_txt(), self.generated_at),
            });
            docs.push(Document {
                path: format!("tables/{}.csv", t.name),
                contents: t.to_csv()?,
            });
        }
        docs.extend(self.figures());
        docs.push(Document {
            path: BUNDLE_FILE.to_owned(),
            contents: serde_json::to_string_pretty(self)? + "\n",
        });
        Ok(docs)
    }

    /// Renders into `dir`, returning the written paths.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let docs = self.render()?;
        for d in &docs {
            write_atomic(&dir.as_ref().join(&d.path), d.contents.as_bytes())?;
        }
        Ok(docs.into_iter().map(|d| d.path).collect())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let text = read_to_string(&dir.as_ref().join(BUNDLE_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

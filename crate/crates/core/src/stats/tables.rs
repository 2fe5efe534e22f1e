//! Cross-model tables: degradation, configuration effects, stability
//! quartiles and the memory-bias census.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{compare, ComparisonResult};
use crate::error::{Error, Result};

use crate::mc_eval::RunSummary;
use crate::model::{DropoutConfig, Family};

/// Reads one mean out of a summary.
pub(crate) type Measure = fn(&RunSummary) -> Option<f64>;

type Groups<'a> = BTreeMap<(usize, &'a str), (&'a DropoutConfig, Vec<(f64, f64)>)>;

/// One model evaluated under one dropout configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    pub config: DropoutConfig,
    pub summary: RunSummary,
}

/// `count / total`, or 0 for an empty population.
pub fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Groups records by model, rejecting a repeated (model, config) pair.
fn by_model(records: &[SummaryRecord]) -> Result<BTreeMap<&str, BTreeMap<&str, &SummaryRecord>>> {
    let mut out: BTreeMap<&str, BTreeMap<&str, &SummaryRecord>> = BTreeMap::new();
    for r in records {
        let slot = out.entry(r.model_id.as_str()).or_default();
        if slot.insert(r.config.name.as_str(), r).is_some() {
            return Err(Error::Validation(format!(
                "duplicate summary for model `{}` under `{}`",
                r.model_id, r.config.name
            )));
        }
    }
    Ok(out)
}

/// Deterministic tests against each dropout-enabled configuration of one
/// model, on run-level accuracies. `runs` must contain a `deterministic`
/// entry.
pub fn within_model_comparisons(
    model_id: &str,
    runs: &[(DropoutConfig, Vec<f64>)],
    family_size: usize,
    alpha: f64,
) -> Result<Vec<ComparisonResult>> {
    let det = runs
        .iter()
        .find(|(c, _)| c.name == "deterministic")
        .ok_or_else(|| Error::invalid(format!("model `{model_id}` has no deterministic runs")))?;
    runs.iter()
        .filter(|(c, _)| c.name != "deterministic")
        .map(|(c, acc)| {
            compare(
                &format!("{model_id}/deterministic"),
                &det.1,
                &format!("{model_id}/{}", c.name),
                acc,
                family_size,
                alpha,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationEntry {
    pub model_id: String,
    pub deterministic_mean: f64,
    pub deterministic_std: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    /// baseline − deterministic; negative when dropout hurts.
    pub degradation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationTable {
    /// Most negative degradation first, ties by model id.
    pub entries: Vec<DegradationEntry>,
    pub negative: usize,
    pub total: usize,
    pub fraction_negative: f64,
    pub warnings: Vec<String>,
}

/// Deterministic-vs-baseline overall accuracy per model. Models lacking
/// either configuration are skipped with a warning.
pub fn degradation_table(records: &[SummaryRecord]) -> Result<DegradationTable> {
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (model, configs) in by_model(records)? {
        match (configs.get("deterministic"), configs.get("baseline")) {
            (Some(d), Some(b)) => entries.push(DegradationEntry {
                model_id: model.to_owned(),
                deterministic_mean: d.summary.mean_overall,
                deterministic_std: d.summary.std_overall,
                baseline_mean: b.summary.mean_overall,
                baseline_std: b.summary.std_overall,
                degradation: b.summary.mean_overall - d.summary.mean_overall,
            }),
            (d, _) => warnings.push(format!(
                "model `{model}` skipped: no {} summary",
                if d.is_none() {
                    "deterministic"
                } else {
                    "baseline"
                }
            )),
        }
    }
    entries.sort_by(|a, b| {
        a.degradation
            .total_cmp(&b.degradation)
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    let negative = entries.iter().filter(|e| e.degradation < 0.0).count();
    Ok(DegradationTable {
        negative,
        total: entries.len(),
        fraction_negative: fraction(negative, entries.len()),
        entries,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEffect {
    pub config: DropoutConfig,
    /// Models with both domain means under this configuration.
    pub models: usize,
    pub mean_memory: f64,
    pub mean_reasoning: f64,
    /// mean_memory − mean_reasoning.
    pub gap: f64,
}

/// Unweighted mean memory and reasoning accuracy across models, per
/// configuration. Standard presets come first in table order, any other
/// configuration after them by name. Summaries missing a domain are left
/// out, and a configuration with none left is omitted.
pub fn config_effect_table(records: &[SummaryRecord]) -> Result<Vec<ConfigEffect>> {
    by_model(records)?;
    let presets = DropoutConfig::presets();
    let rank = |name: &str| {
        presets
            .iter()
            .position(|p| p.name == name)
            .unwrap_or(presets.len())
    };
    let mut groups: Groups = BTreeMap::new();
    for r in records {
        let key = (rank(&r.config.name), r.config.name.as_str());
        let slot = groups.entry(key).or_insert((&r.config, Vec::new()));
        if slot.0 != &r.config {
            return Err(Error::Validation(format!(
                "configuration `{}` appears with different rates",
                r.config.name
            )));
        }
        if let (Some(m), Some(q)) = (r.summary.mean_memory, r.summary.mean_reasoning) {
            slot.1.push((m, q));
        }
    }
    Ok(groups
        .into_values()
        .filter(|(_, v)| !v.is_empty())
        .map(|(config, v)| {
            let n = v.len() as f64;
            let mean_memory = v.iter().map(|x| x.0).sum::<f64>() / n;
            let mean_reasoning = v.iter().map(|x| x.1).sum::<f64>() / n;
            ConfigEffect {
                config: config.clone(),
                models: v.len(),
                mean_memory,
                mean_reasoning,
                gap: mean_memory - mean_reasoning,
            }
        })
        .collect())
}

fn single_config<'a>(records: &'a [SummaryRecord], what: &str) -> Result<&'a DropoutConfig> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid(format!("{what} needs at least one summary")))?;
    if let Some(r) = records.iter().find(|r| r.config.name != first.config.name) {
        return Err(Error::invalid(format!(
            "{what} takes one configuration, got `{}` and `{}`",
            first.config.name, r.config.name
        )));
    }
    by_model(records)?;
    Ok(&first.config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub config: String,
    /// (model id, std_overall), most stable first.
    pub ranking: Vec<(String, f64)>,
    pub quartile_size: usize,
    pub most_stable: Vec<String>,
    pub least_stable: Vec<String>,
    /// Overall, memory and reasoning mean accuracy of the most stable
    /// quartile against the least stable one, Bonferroni family of 3.
    /// Empty when a quartile holds a single model.
    pub comparisons: Vec<ComparisonResult>,
    pub notes: Vec<String>,
}

/// Ranks models by `std_overall` (ties by model id) and compares the lowest
/// and highest quartiles of size ⌊k/4⌋ on per-model mean accuracies.
pub fn stability_quartiles(records: &[SummaryRecord], alpha: f64) -> Result<StabilityReport> {
    let config = single_config(records, "stability quartiles")?;
    if records.len() < 4 {
        return Err(Error::invalid(format!(
            "stability quartiles need at least 4 models, got {}",
            records.len()
        )));
    }
    let mut ranked: Vec<&SummaryRecord> = records.iter().collect();
    ranked.sort_by(|a, b| {
        a.summary
            .std_overall
            .total_cmp(&b.summary.std_overall)
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    let q = ranked.len() / 4;
    let low = &ranked[..q];
    let high = &ranked[ranked.len() - q..];
    let mut comparisons = Vec::new();
    let mut notes = Vec::new();
    if q < 2 {
        notes.push(format!(
            "quartile size {q} is too small for a two-sample test"
        ));
    } else {
        let measures: [(&str, Measure); 3] = [
            ("overall", |s| Some(s.mean_overall)),
            ("memory", |s| s.mean_memory),
            ("reasoning", |s| s.mean_reasoning),
        ];
        for (name, get) in measures {
            let a: Option<Vec<f64>> = low.iter().map(|r| get(&r.summary)).collect();
            let b: Option<Vec<f64>> = high.iter().map(|r| get(&r.summary)).collect();
            match (a, b) {
                (Some(a), Some(b)) => comparisons.push(compare(
                    &format!("most_stable/{name}"),
                    &a,
                    &format!("least_stable/{name}"),
                    &b,
                    3,
                    alpha,
                )?),
                _ => notes.push(format!(
                    "{name} comparison skipped: a summary lacks that domain"
                )),
            }
        }
    }
    Ok(StabilityReport {
        config: config.name.clone(),
        ranking: ranked
            .iter()
            .map(|r| (r.model_id.clone(), r.summary.std_overall))
            .collect(),
        quartile_size: q,
        most_stable: low.iter().map(|r| r.model_id.clone()).collect(),
        least_stable: high.iter().map(|r| r.model_id.clone()).collect(),
        comparisons,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCensus {
    pub config: String,
    pub models: usize,
    /// Models with a strictly positive differential.
    pub positive: usize,
    pub fraction_positive: f64,
    pub mean_delta: f64,
    /// Models left out because a domain was missing.
    pub excluded: Vec<String>,
}

/// Counts memory-biased models (Δ_cog > 0) at one configuration.
pub fn memory_bias_census(records: &[SummaryRecord]) -> Result<BiasCensus> {
    let config = single_config(records, "memory bias census")?;
    let deltas: Vec<f64> = records.iter().filter_map(|r| r.summary.delta_cog).collect();
    if deltas.is_empty() {
        return Err(Error::invalid("no summary has both domains"));
    }
    let positive = deltas.iter().filter(|&&d| d > 0.0).count();
    Ok(BiasCensus {
        config: config.name.clone(),
        models: deltas.len(),
        positive,
        fraction_positive: fraction(positive, deltas.len()),
        mean_delta: deltas.iter().sum::<f64>() / deltas.len() as f64,
        excluded: records
            .iter()
            .filter(|r| r.summary.delta_cog.is_none())
            .map(|r| r.model_id.clone())
            .collect(),
    })
}

//! Corrected hypothesis tests and the cross-model tables built on run
//! summaries.
//!
//! Tests are Welch's unequal-variance t-test on run-level (or per-model)
//! accuracies, with Bonferroni correction over an explicit family size and
//! Cohen's d on the pooled sample standard deviation.

pub(crate) mod tables;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

pub use tables::{
    config_effect_table, degradation_table, fraction, memory_bias_census, stability_quartiles,
    within_model_comparisons, BiasCensus, ConfigEffect, DegradationEntry, DegradationTable,
    StabilityReport, SummaryRecord,
};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Outcome of one two-sample comparison. `mean_diff` is a − b.
///
/// `t_stat` and `cohens_d` are infinite when both groups are constant but
/// unequal; they serialise as the strings `"inf"`/`"-inf"` in that case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub label_a: String,
    pub label_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_diff: f64,
    #[serde(with = "extended_f64")]
    pub t_stat: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub alpha: f64,
    pub family_size: usize,
    pub alpha_adjusted: f64,
    #[serde(with = "extended_f64")]
    pub cohens_d: f64,
    pub significant: bool,
    /// At least one group has zero variance.
    pub degenerate: bool,
}

/// Bonferroni-adjusted p-value, capped at 1.
pub fn bonferroni(p_raw: f64, family_size: usize) -> f64 {
    (p_raw * family_size as f64).min(1.0)
}

/// Per-test significance level for a family of `family_size` tests.
pub fn bonferroni_alpha(alpha: f64, family_size: usize) -> f64 {
    alpha / family_size as f64
}

/// Mean and unbiased (n − 1) variance, two-pass. A constant array gives its
/// value and exactly zero, which summation rounding would not.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (m, ss / (n - 1.0))
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom,
/// `P(|T| ≥ |t|) = I_{df/(df+t²)}(df/2, 1/2)`. The regularized incomplete
/// beta comes from `statrs` (modified Lentz continued fraction, converged to
/// machine precision).
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Welch t-test of `a` against `b` with Bonferroni correction over
/// `family_size` tests at level `alpha`.
///
/// Zero-variance groups are handled without dividing by zero:
///
/// * both constant and equal: diff 0, t 0, p 1, d 0;
/// * both constant and unequal: t and d infinite, p 0;
/// * one constant: Welch's df reduces to n − 1 of the other group, and d
///   uses the other group's standard deviation alone.
///
/// All three set `degenerate`.
pub fn compare(
    label_a: &str,
    a: &[f64],
    label_b: &str,
    b: &[f64],
    family_size: usize,
    alpha: f64,
) -> Result<ComparisonResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "compare needs at least 2 values per group (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if family_size == 0 {
        return Err(Error::invalid("family size must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::invalid("compare input contains a non-finite value"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let diff = ma - mb;
    let (sa, sb) = (va / na, vb / nb);
    let degenerate = va == 0.0 || vb == 0.0;

    let (t_stat, df, cohens_d) = if va == 0.0 && vb == 0.0 {
        let df = na + nb - 2.0;
        if diff == 0.0 {
            (0.0, df, 0.0)
        } else {
            (
                f64::INFINITY.copysign(diff),
                df,
                f64::INFINITY.copysign(diff),
            )
        }
    } else {
        let se2 = sa + sb;
        let t = diff / se2.sqrt();
        let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        let sd = if va == 0.0 {
            vb.sqrt()
        } else if vb == 0.0 {
            va.sqrt()
        } else {
            (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt()
        };
        (t, df, diff / sd)
    };
    let p_raw = t_two_sided(t_stat, df);
    let alpha_adjusted = bonferroni_alpha(alpha, family_size);
    Ok(ComparisonResult {
        label_a: label_a.to_owned(),
        label_b: label_b.to_owned(),
        n_a: a.len(),
        n_b: b.len(),
        mean_diff: diff,
        t_stat,
        df,
        p_raw,
        p_adjusted: bonferroni(p_raw, family_size),
        alpha,
        family_size,
        alpha_adjusted,
        cohens_d,
        significant: p_raw < alpha_adjusted,
        degenerate,
    })
}

/// f64 that may be ±∞, stored as a JSON number or `"inf"`/`"-inf"`.
mod extended_f64 {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(D::Error::custom(format!(
                "expected a number, \"inf\" or \"-inf\", got `{t}`"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_arrays_are_not_different() {
        let a = [0.5, 0.6, 0.7];
        let r = compare("a", &a, "b", &a, 1, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.mean_diff, 0.0);
        assert_eq!(r.cohens_d, 0.0);
        assert_eq!(r.p_raw, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn bonferroni_fields() {
        assert!((bonferroni(0.01, 15) - 0.15).abs() < 1e-15);
        assert_eq!(bonferroni(0.2, 15), 1.0);
        assert!((bonferroni_alpha(0.05, 15) - 0.05 / 15.0).abs() < 1e-18);
        assert!(0.01 > bonferroni_alpha(0.05, 15));
    }

    #[test]
    fn textbook_example() {
        // Two small samples checked against a hand evaluation of the formulas.
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        let r = compare("a", &a, "b", &b, 1, DEFAULT_ALPHA).unwrap();
        // va = 5/3, vb = 10, se² = 5/12 + 2 = 29/12
        let t = -3.5 / (29.0f64 / 12.0).sqrt();
        let df = (29.0f64 / 12.0).powi(2) / ((5.0f64 / 12.0).powi(2) / 3.0 + 4.0 / 4.0);
        assert!((r.t_stat - t).abs() < 1e-12);
        assert!((r.df - df).abs() < 1e-12);
        let sp = ((3.0 * 5.0 / 3.0 + 4.0 * 10.0) / 7.0f64).sqrt();
        assert!((r.cohens_d + 3.5 / sp).abs() < 1e-12);
        assert!(r.p_raw > 0.05 && r.p_raw < 0.1);
    }

    #[test]
    fn t_tail_known_values() {
        // df = 1 is Cauchy: P(|T| > 1) = 1/2.
        assert!((t_two_sided(1.0, 1.0) - 0.5).abs() < 1e-14);
        // df = 2: P(|T| > t) = 1 − t / sqrt(2 + t²).
        let t: f64 = 1.7;
        assert!((t_two_sided(t, 2.0) - (1.0 - t / (2.0 + t * t).sqrt())).abs() < 1e-14);
    }

    #[test]
    fn one_constant_group_is_degenerate() {
        let det = [0.7; 10];
        let mc = [0.6, 0.62, 0.58, 0.61, 0.59, 0.6, 0.63, 0.57, 0.6, 0.6];
        let r = compare("det", &det, "mc", &mc, 15, DEFAULT_ALPHA).unwrap();
        assert!(r.degenerate);
        assert!((r.df - 9.0).abs() < 1e-9);
        let (_, vb) = mean_var(&mc);
        assert!((r.cohens_d - r.mean_diff / vb.sqrt()).abs() < 1e-12);
        assert!(r.significant);
    }

    #[test]
    fn constant_unequal_groups_serialise() {
        let r = compare("a", &[0.8, 0.8], "b", &[0.6, 0.6], 3, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.t_stat, f64::INFINITY);
        assert_eq!(r.p_raw, 0.0);
        assert!(r.significant && r.degenerate);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"t_stat\":\"inf\""));
        let back: ComparisonResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn rejects_short_or_bad_input() {
        assert!(compare("a", &[1.0], "b", &[1.0, 2.0], 1, 0.05).is_err());
        assert!(compare("a", &[1.0, 2.0], "b", &[1.0, 2.0], 0, 0.05).is_err());
        assert!(compare("a", &[1.0, f64::NAN], "b", &[1.0, 2.0], 1, 0.05).is_err());
    }
}

//! Monte Carlo Dropout evaluation: repeated stochastic passes over a test set,
//! the full pass × sample prediction matrix, and run-level summaries.

mod format;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, Checkpoint, DropoutConfig, EvalMode};
use crate::numerics::RngStream;
use crate::tasks::{Domain, Encoded};
use crate::trainer::predict_positive;

pub use format::{verify, Mismatch, MATRIX_FORMAT, MATRIX_FORMAT_VERSION};

/// Passes per evaluation unless overridden.
pub const DEFAULT_PASSES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub domain: Domain,
    pub label: bool,
}

/// M passes × N samples of binary predictions and positive-class
/// probabilities, stored row-major by pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub samples: Vec<SampleMeta>,
    predictions: Vec<bool>,
    probabilities: Vec<f64>,
    pub dropout: DropoutConfig,
    pub mode: EvalMode,
    pub base_seed: u64,
    pub checkpoint_digest: String,
}

impl PredictionMatrix {
    /// Builds a matrix from per-pass probabilities, deriving predictions with
    /// the 0.5 threshold.
    pub fn from_probabilities(
        samples: Vec<SampleMeta>,
        probabilities: Vec<Vec<f64>>,
        dropout: DropoutConfig,
        mode: EvalMode,
        base_seed: u64,
        checkpoint_digest: String,
    ) -> Result<Self> {
        let flat: Vec<f64> = probabilities.into_iter().flatten().collect();
        let predictions = flat.iter().map(|&p| predict_positive(p)).collect();
        let pm = Self {
            samples,
            predictions,
            probabilities: flat,
            dropout,
            mode,
            base_seed,
            checkpoint_digest,
        };
        pm.validate()?;
        Ok(pm)
    }

    /// Raw constructor used by the reader; checks shapes only.
    pub(crate) fn from_parts(
        samples: Vec<SampleMeta>,
        predictions: Vec<bool>,
        probabilities: Vec<f64>,
        dropout: DropoutConfig,
        mode: EvalMode,
        base_seed: u64,
        checkpoint_digest: String,
    ) -> Result<Self> {
        let pm = Self {
            samples,
            predictions,
            probabilities,
            dropout,
            mode,
            base_seed,
            checkpoint_digest,
        };
        pm.check_shape()?;
        Ok(pm)
    }

    pub fn passes(&self) -> usize {
        self.predictions.len() / self.samples.len().max(1)
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn prediction(&self, pass: usize, sample: usize) -> bool {
        self.predictions[pass * self.samples.len() + sample]
    }

    pub fn probability(&self, pass: usize, sample: usize) -> f64 {
        self.probabilities[pass * self.samples.len() + sample]
    }

    pub fn pass_predictions(&self, pass: usize) -> &[bool] {
        let n = self.samples.len();
        &self.predictions[pass * n..(pass + 1) * n]
    }

    pub fn pass_probabilities(&self, pass: usize) -> &[f64] {
        let n = self.samples.len();
        &self.probabilities[pass * n..(pass + 1) * n]
    }

    /// Test hook for tamper detection.
    pub fn set_prediction(&mut self, pass: usize, sample: usize, value: bool) {
        let n = self.samples.len();
        self.predictions[pass * n + sample] = value;
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.samples.len();
        if n == 0 {
            return Err(Error::Validation("prediction matrix has no samples".into()));
        }
        if self.predictions.is_empty() || !self.predictions.len().is_multiple_of(n) {
            return Err(Error::Validation(format!(
                "{} predictions do not fill whole passes of {n} samples",
                self.predictions.len()
            )));
        }
        if self.probabilities.len() != self.predictions.len() {
            return Err(Error::Validation(
                "prediction and probability counts differ".into(),
            ));
        }
        if let Some((i, p)) = self
            .probabilities
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::Validation(format!(
                "probability {p} at pass {}, sample {} outside [0, 1]",
                i / n,
                i % n
            )));
        }
        Ok(())
    }

    /// Cells whose stored prediction disagrees with its probability under the
    /// 0.5 threshold, as `(pass, sample)`.
    pub fn threshold_violations(&self) -> Vec<(usize, usize)> {
        let n = self.samples.len();
        self.predictions
            .iter()
            .zip(&self.probabilities)
            .enumerate()
            .filter(|(_, (&pred, &p))| pred != predict_positive(p))
            .map(|(i, _)| (i / n, i % n))
            .collect()
    }

    /// Full invariant check: shape, threshold consistency, identical rows in
    /// deterministic mode.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        self.dropout.validate()?;
        if let Some(&(m, n)) = self.threshold_violations().first() {
            return Err(Error::Validation(format!(
                "prediction at pass {m}, sample {n} disagrees with its probability"
            )));
        }
        if self.mode == EvalMode::Deterministic {
            let first = self.pass_probabilities(0);
            if let Some(m) = (1..self.passes()).find(|&m| self.pass_probabilities(m) != first) {
                return Err(Error::Validation(format!(
                    "deterministic matrix row {m} differs from row 0"
                )));
            }
        }
        Ok(())
    }
}

/// Sample metadata in test-set order.
pub fn sample_meta(data: &Encoded) -> Vec<SampleMeta> {
    (0..data.len())
        .map(|i| SampleMeta {
            id: data.ids[i].clone(),
            domain: data.domains[i],
            label: data.labels[i],
        })
        .collect()
}

/// Runs `passes` forward passes with dropout at the configured rates; pass
/// `m` draws its masks from `RngStream(base_seed, m)`.
pub fn mc_run(
    ckpt: &Checkpoint,
    test: &Encoded,
    dropout: &DropoutConfig,
    passes: usize,
    base_seed: u64,
) -> Result<PredictionMatrix> {
    if passes == 0 {
        return Err(Error::invalid("passes must be at least 1"));
    }
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    dropout.validate()?;
    let mode = dropout.mode();
    let rows: Vec<Vec<f64>> = (0..passes as u64)
        .into_par_iter()
        .map(|m| {
            forward(
                ckpt,
                &test.tokens,
                dropout,
                mode,
                RngStream::new(base_seed, m),
            )
            .map(|probs| probs.iter().map(|p| p[1]).collect())
        })
        .collect::<Result<_>>()?;
    PredictionMatrix::from_probabilities(
        sample_meta(test),
        rows,
        dropout.clone(),
        mode,
        base_seed,
        ckpt.digest()?,
    )
}

/// Per-pass accuracy over all samples and over each domain present.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAccuracies {
    pub overall: Vec<f64>,
    pub memory: Option<Vec<f64>>,
    pub reasoning: Option<Vec<f64>>,
}

impl RunAccuracies {
    pub fn domain(&self, d: Domain) -> Option<&[f64]> {
        match d {
            Domain::Memory => self.memory.as_deref(),
            Domain::Reasoning => self.reasoning.as_deref(),
        }
    }
}

/// Scores every pass separately; probabilities are never averaged across
/// passes.
pub fn run_level_accuracy(pm: &PredictionMatrix) -> RunAccuracies {
    let per_pass = |keep: &dyn Fn(&SampleMeta) -> bool| -> Option<Vec<f64>> {
        let idx: Vec<usize> = (0..pm.n_samples())
            .filter(|&i| keep(&pm.samples[i]))
            .collect();
        if idx.is_empty() {
            return None;
        }
        Some(
            (0..pm.passes())
                .map(|m| {
                    let row = pm.pass_predictions(m);
                    let correct = idx
                        .iter()
                        .filter(|&&i| row[i] == pm.samples[i].label)
                        .count();
                    correct as f64 / idx.len() as f64
                })
                .collect(),
        )
    };
    RunAccuracies {
        overall: per_pass(&|_| true).expect("matrix has samples"),
        memory: per_pass(&|s| s.domain == Domain::Memory),
        reasoning: per_pass(&|s| s.domain == Domain::Reasoning),
    }
}

/// Arithmetic mean. Identical values give that value exactly, which a plain
/// sum-and-divide does not guarantee.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return xs.first().copied().unwrap_or(f64::NAN);
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Divide-by-n standard deviation; exactly 0 for identical values.
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Mean and population std of run-level accuracies. Domain fields are `None`
/// when the matrix holds no sample of that domain, and then `delta_cog` is
/// undefined too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean_overall: f64,
    pub std_overall: f64,
    pub mean_memory: Option<f64>,
    pub std_memory: Option<f64>,
    pub mean_reasoning: Option<f64>,
    pub std_reasoning: Option<f64>,
    pub delta_cog: Option<f64>,
}

impl RunSummary {
    /// Summary from already-computed means and stds.
    pub fn from_moments(
        overall: (f64, f64),
        memory: Option<(f64, f64)>,
        reasoning: Option<(f64, f64)>,
    ) -> Self {
        Self {
            mean_overall: overall.0,
            std_overall: overall.1,
            mean_memory: memory.map(|m| m.0),
            std_memory: memory.map(|m| m.1),
            mean_reasoning: reasoning.map(|r| r.0),
            std_reasoning: reasoning.map(|r| r.1),
            delta_cog: memory.zip(reasoning).map(|(m, r)| delta_cog(m.0, r.0)),
        }
    }

    /// False when a domain was missing from the evaluated matrix.
    pub fn is_complete(&self) -> bool {
        self.delta_cog.is_some()
    }

    pub fn domain_mean(&self, d: Domain) -> Option<f64> {
        match d {
            Domain::Memory => self.mean_memory,
            Domain::Reasoning => self.mean_reasoning,
        }
    }

    pub fn domain_std(&self, d: Domain) -> Option<f64> {
        match d {
            Domain::Memory => self.std_memory,
            Domain::Reasoning => self.std_reasoning,
        }
    }
}

/// Memory mean minus reasoning mean; positive means memory-biased.
pub fn delta_cog(mean_memory: f64, mean_reasoning: f64) -> f64 {
    mean_memory - mean_reasoning
}

pub fn summarize_accuracies(acc: &RunAccuracies) -> RunSummary {
    let moments = |xs: &[f64]| (mean(xs), population_std(xs));
    RunSummary::from_moments(
        moments(&acc.overall),
        acc.memory.as_deref().map(moments),
        acc.reasoning.as_deref().map(moments),
    )
}

pub fn summarize(pm: &PredictionMatrix) -> RunSummary {
    summarize_accuracies(&run_level_accuracy(pm))
}

#[cfg(test)]
mod tests {
    #[test]
    fn identical_runs_have_exactly_zero_spread() {
        let xs = vec![0.735; 100];
        assert_eq!(super::mean(&xs), 0.735);
        assert_eq!(super::population_std(&xs), 0.0);
    }

    use super::*;

    fn meta(domains: &[Domain], labels: &[bool]) -> Vec<SampleMeta> {
        domains
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&domain, &label))| SampleMeta {
                id: format!("s{i}"),
                domain,
                label,
            })
            .collect()
    }

    fn matrix(
        preds: &[&[bool]],
        domains: &[Domain],
        labels: &[bool],
        mode: EvalMode,
    ) -> PredictionMatrix {
        let probs = preds
            .iter()
            .map(|row| row.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect())
            .collect();
        let dropout = if mode == EvalMode::Deterministic {
            DropoutConfig::deterministic()
        } else {
            DropoutConfig::baseline()
        };
        PredictionMatrix::from_probabilities(
            meta(domains, labels),
            probs,
            dropout,
            mode,
            0,
            "x".into(),
        )
        .unwrap()
    }

    #[test]
    fn run_level_accuracy_counts_each_pass() {
        let d = [Domain::Memory; 3];
        let pm = matrix(
            &[&[true, true, false], &[true, false, false]],
            &d,
            &[true; 3],
            EvalMode::Stochastic,
        );
        let acc = run_level_accuracy(&pm);
        assert_eq!(acc.overall, vec![2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(acc.memory.as_ref(), Some(&acc.overall));
        assert!(acc.reasoning.is_none());
        let s = summarize(&pm);
        assert!(!s.is_complete());
        assert_eq!(s.mean_reasoning, None);
    }

    #[test]
    fn all_correct_scores_one() {
        let d = [Domain::Memory, Domain::Reasoning];
        let pm = matrix(
            &[&[true, false], &[true, false]],
            &d,
            &[true, false],
            EvalMode::Stochastic,
        );
        assert!(run_level_accuracy(&pm).overall.iter().all(|&a| a == 1.0));
        let s = summarize(&pm);
        assert_eq!((s.std_overall, s.delta_cog), (0.0, Some(0.0)));
    }

    #[test]
    fn population_std_divides_by_n() {
        assert_eq!(population_std(&[0.0, 1.0]), 0.5);
        assert_eq!(population_std(&[0.3; 5]), 0.0);
    }

    #[test]
    fn delta_sign_follows_memory_minus_reasoning() {
        assert!((delta_cog(0.922, 0.669) - 0.253).abs() < 1e-9);
        assert_eq!(delta_cog(0.5, 0.5), 0.0);
        assert!(delta_cog(0.4, 0.6) < 0.0);
    }

    #[test]
    fn validation_catches_broken_invariants() {
        let d = [Domain::Memory, Domain::Reasoning];
        let mut pm = matrix(
            &[&[true, false], &[true, false]],
            &d,
            &[true, false],
            EvalMode::Deterministic,
        );
        assert!(pm.validate().is_ok());
        pm.set_prediction(1, 0, false);
        assert_eq!(pm.threshold_violations(), vec![(1, 0)]);
        assert!(pm.validate().is_err());

        let pm = matrix(
            &[&[true, false], &[false, false]],
            &d,
            &[true, false],
            EvalMode::Stochastic,
        );
        let mut det = pm.clone();
        det.mode = EvalMode::Deterministic;
        assert!(det.validate().unwrap_err().to_string().contains("row 1"));

        let bad = PredictionMatrix::from_probabilities(
            meta(&d, &[true, true]),
            vec![vec![0.2]],
            DropoutConfig::baseline(),
            EvalMode::Stochastic,
            0,
            "x".into(),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn tie_probability_predicts_negative() {
        let pm = PredictionMatrix::from_probabilities(
            meta(&[Domain::Memory], &[false]),
            vec![vec![0.5]],
            DropoutConfig::baseline(),
            EvalMode::Stochastic,
            0,
            "x".into(),
        )
        .unwrap();
        assert!(!pm.prediction(0, 0));
    }
}

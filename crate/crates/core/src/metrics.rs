//! Weighted F-scores and the confidence-aware three-part assessment metric.
//!
//! The three parts, over predictions with classes (correct, mistake 1,
//! mistake 2) and a confidence threshold `τ`:
//!
//! * M1: binary F-score with "correct" as the positive class, over examples
//!   that are correct or predicted correct.
//! * M2: support-weighted F-score over the mistake classes, restricted to
//!   incorrect examples predicted as a mistake with probability `>= τ`.
//! * M3: percentage of incorrect examples predicted as a mistake with
//!   probability `< τ`.

use serde::{Deserialize, Serialize};

use crate::classifier::ClassPrediction;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("class index {0} outside 0..=2")]
    InvalidClass(usize),
}

/// `(1 + β²)·P·R / (β²·P + R)`, or 0 when the denominator is 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Support-weighted F-score over `classes`, from `(truth, predicted)` pairs.
/// A class nobody belongs to and nobody predicted contributes nothing.
pub fn weighted_fbeta(pairs: &[(usize, usize)], classes: &[usize], beta: f64) -> f64 {
    let total = pairs.len();
    if total == 0 {
        return 0.0;
    }
    let mut score = 0.0;
    for &c in classes {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count();
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count();
        let fneg = pairs.iter().filter(|&&(t, p)| t == c && p != c).count();
        let support = tp + fneg;
        let f = f_beta(ratio(tp, tp + fp), ratio(tp, tp + fneg), beta);
        score += ratio(support, total) * f;
    }
    score
}

/// Score that may be undefined because its example subset is empty.
/// Serializes as a number or `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Score {
    Defined(f64),
    UndefinedEmpty,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Defined(v) => Some(v),
            Score::UndefinedEmpty => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Score::Defined(_))
    }
}

impl From<Option<f64>> for Score {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Score::UndefinedEmpty, Score::Defined)
    }
}

impl From<Score> for Option<f64> {
    fn from(s: Score) -> Self {
        s.value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub examples: Vec<(usize, ClassPrediction)>,
    pub tau: f64,
    pub beta: f64,
}

impl EvalSet {
    pub fn new(examples: Vec<(usize, ClassPrediction)>) -> Self {
        Self {
            examples,
            tau: 0.5,
            beta: 1.0,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.examples.is_empty() {
            return Err(MetricsError::EmptyEvalSet);
        }
        match self.examples.iter().find(|(t, _)| *t > 2) {
            Some(&(t, _)) => Err(MetricsError::InvalidClass(t)),
            None => Ok(()),
        }
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        self.examples.iter().map(|(t, p)| (*t, p.argmax())).collect()
    }
}

/// Multiclass weighted F-score over all three classes.
pub fn weighted_f1(set: &EvalSet) -> Result<f64, MetricsError> {
    set.validate()?;
    Ok(weighted_fbeta(&set.pairs(), &[0, 1, 2], set.beta))
}

/// Example indices behind each part of the metric.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Partition {
    /// Correct, or predicted correct.
    pub m1: Vec<usize>,
    /// Incorrect, predicted as a mistake with confidence.
    pub m2: Vec<usize>,
    /// Incorrect, predicted as a mistake without confidence.
    pub m3: Vec<usize>,
    /// Incorrect but predicted correct.
    pub incorrect_predicted_correct: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreePartReport {
    pub m1: f64,
    pub m2: Score,
    pub m3_percent: f64,
    pub partition: Partition,
    pub truth_incorrect: usize,
}

pub fn three_part(set: &EvalSet) -> Result<ThreePartReport, MetricsError> {
    set.validate()?;
    let mut part = Partition::default();
    let mut truth_incorrect = 0;
    for (idx, (truth, pred)) in set.examples.iter().enumerate() {
        let predicted = pred.argmax();
        if *truth == 0 || predicted == 0 {
            part.m1.push(idx);
        }
        if *truth == 0 {
            continue;
        }
        truth_incorrect += 1;
        if predicted == 0 {
            part.incorrect_predicted_correct.push(idx);
        } else if pred.max_incorrect() >= set.tau {
            part.m2.push(idx);
        } else {
            part.m3.push(idx);
        }
    }

    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for &i in &part.m1 {
        let (truth, pred) = &set.examples[i];
        match (*truth == 0, pred.argmax() == 0) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => {}
        }
    }
    let m1 = f_beta(ratio(tp, tp + fp), ratio(tp, tp + fneg), set.beta);

    let m2 = if part.m2.is_empty() {
        Score::UndefinedEmpty
    } else {
        let pairs: Vec<(usize, usize)> = part
            .m2
            .iter()
            .map(|&i| (set.examples[i].0, set.examples[i].1.argmax()))
            .collect();
        Score::Defined(weighted_fbeta(&pairs, &[1, 2], set.beta))
    };
    let m3_percent = ratio(100 * part.m3.len(), truth_incorrect);

    Ok(ThreePartReport {
        m1,
        m2,
        m3_percent,
        partition: part,
        truth_incorrect,
    })
}

/// Example counts reported next to the scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub total: usize,
    pub truth_correct: usize,
    pub truth_incorrect: usize,
    pub m1_examples: usize,
    pub m2_examples: usize,
    pub m3_examples: usize,
    pub incorrect_predicted_correct: usize,
    pub per_class: [usize; 3],
}

/// Evaluation summary as emitted by the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub multiclass_f1: f64,
    pub m1: f64,
    pub m2: Score,
    pub m3_percent: f64,
    pub counts: EvalCounts,
}

pub fn summarize(set: &EvalSet) -> Result<EvalSummary, MetricsError> {
    let multiclass_f1 = weighted_f1(set)?;
    let report = three_part(set)?;
    let mut per_class = [0usize; 3];
    for (t, _) in &set.examples {
        per_class[*t] += 1;
    }
    Ok(EvalSummary {
        multiclass_f1,
        m1: report.m1,
        m2: report.m2,
        m3_percent: report.m3_percent,
        counts: EvalCounts {
            total: set.examples.len(),
            truth_correct: per_class[0],
            truth_incorrect: report.truth_incorrect,
            m1_examples: report.partition.m1.len(),
            m2_examples: report.partition.m2.len(),
            m3_examples: report.partition.m3.len(),
            incorrect_predicted_correct: report.partition.incorrect_predicted_correct.len(),
            per_class,
        },
    })
}

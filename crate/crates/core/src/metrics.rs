//! Binary intent metrics and multi-label reason metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DECISION_THRESHOLD: f64 = 0.5;

/// Confusion counts of one binary problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_decisions(predicted: &[bool], actual: &[bool]) -> Self {
        let mut c = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Zero when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Zero when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`; zero when all three counts are zero.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Area under the ROC curve via the rank-sum statistic with average ranks
/// for ties. `None` when one class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let np = n_pos as f64;
    Some((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

pub fn intent_metrics(probabilities: &[f64], labels: &[bool]) -> IntentMetrics {
    let decisions: Vec<bool> = probabilities.iter().map(|&p| p >= DECISION_THRESHOLD).collect();
    let confusion = Confusion::from_decisions(&decisions, labels);
    IntentMetrics {
        accuracy: confusion.accuracy(),
        f1: confusion.f1(),
        precision: confusion.precision(),
        recall: confusion.recall(),
        auc: auc(probabilities, labels),
        confusion,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub id: usize,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonMetrics {
    /// Fraction of samples whose predicted set equals the target set.
    pub subset_accuracy: f64,
    /// Mean per-label correctness.
    pub hamming_accuracy: f64,
    /// Mean F1 over classes that occur in the targets or the predictions.
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// `predicted` and `targets` are sample-major label sets of equal width.
pub fn reason_metrics(predicted: &[Vec<bool>], targets: &[Vec<bool>]) -> Result<ReasonMetrics> {
    if predicted.len() != targets.len() || predicted.is_empty() {
        return Err(Error::Validation(format!(
            "reason metrics need equal non-empty sample counts, got {} and {}",
            predicted.len(),
            targets.len()
        )));
    }
    let n = targets[0].len();
    if predicted.iter().chain(targets).any(|r| r.len() != n) {
        return Err(Error::Validation("reason label rows differ in width".into()));
    }
    let samples = targets.len();
    let exact = predicted.iter().zip(targets).filter(|(p, t)| p == t).count();
    let agreeing: usize = predicted
        .iter()
        .zip(targets)
        .map(|(p, t)| p.iter().zip(t).filter(|(a, b)| a == b).count())
        .sum();
    let mut per_class = Vec::with_capacity(n);
    let mut f1_sum = 0.0;
    let mut active = 0usize;
    for j in 0..n {
        let p: Vec<bool> = predicted.iter().map(|r| r[j]).collect();
        let t: Vec<bool> = targets.iter().map(|r| r[j]).collect();
        let c = Confusion::from_decisions(&p, &t);
        if c.tp + c.fp + c.fn_ > 0 {
            active += 1;
            f1_sum += c.f1();
        }
        per_class.push(ClassMetrics {
            id: j,
            support: c.tp + c.fn_,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        });
    }
    Ok(ReasonMetrics {
        subset_accuracy: exact as f64 / samples as f64,
        hamming_accuracy: agreeing as f64 / (samples * n) as f64,
        macro_f1: if active == 0 { 1.0 } else { f1_sum / active as f64 },
        per_class,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub intent: IntentMetrics,
    pub reason: ReasonMetrics,
    /// Seconds of forward computation per sample.
    pub wall_clock_per_sample: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let m = intent_metrics(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]);
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn auc_ties_count_half() {
        assert_eq!(auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(auc(&[0.1, 0.5, 0.5, 0.9], &[false, true, false, true]), Some(0.875));
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn exact_predictions_score_one() {
        let t = vec![vec![true, false, true], vec![false, true, false]];
        let m = reason_metrics(&t, &t).unwrap();
        assert_eq!(m.subset_accuracy, 1.0);
        assert_eq!(m.hamming_accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn unseen_classes_are_excluded_from_macro_f1() {
        let t = vec![vec![true, false], vec![false, false]];
        let p = vec![vec![true, false], vec![true, false]];
        let m = reason_metrics(&p, &t).unwrap();
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.subset_accuracy, 0.5);
        assert_eq!(m.hamming_accuracy, 0.75);
    }

    #[test]
    fn mismatched_counts_rejected() {
        assert!(reason_metrics(&[vec![true]], &[]).is_err());
        assert!(reason_metrics(&[], &[]).is_err());
    }
}

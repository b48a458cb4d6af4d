//! Definitional metric references.

use crossing_intent::metrics::{auc, intent_metrics, reason_metrics};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AUC as the share of (positive, negative) pairs ordered correctly, ties
/// counting one half.
pub fn auc_pairs(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// `(accuracy, precision, recall, f1)` from counted outcomes; zero
/// denominators give 0.
pub fn confusion_scores(predicted: &[bool], actual: &[bool]) -> (f64, f64, f64, f64) {
    let count = |p: bool, a: bool| predicted.iter().zip(actual).filter(|&(&x, &y)| x == p && y == a).count() as f64;
    let (tp, fp, tn, fnn) = (count(true, true), count(true, false), count(false, false), count(false, true));
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fnn);
    (div(tp + tn, tp + fp + tn + fnn), precision, recall, div(2.0 * tp, 2.0 * tp + fp + fnn))
}

pub fn subset_accuracy(predicted: &[Vec<bool>], targets: &[Vec<bool>]) -> f64 {
    let mut exact = 0;
    for (p, t) in predicted.iter().zip(targets) {
        let mut same = true;
        for k in 0..t.len() {
            if p[k] != t[k] {
                same = false;
            }
        }
        if same {
            exact += 1;
        }
    }
    exact as f64 / targets.len() as f64
}

pub fn hamming_accuracy(predicted: &[Vec<bool>], targets: &[Vec<bool>]) -> f64 {
    let mut agree = 0;
    let mut total = 0;
    for (p, t) in predicted.iter().zip(targets) {
        for k in 0..t.len() {
            total += 1;
            if p[k] == t[k] {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

/// Number of disagreements between the library metrics and the references
/// over `cases` random inputs of at most 50 samples. Scores are drawn from
/// a coarse grid so ties occur.
pub fn metric_disagreements(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let m = rng.random_range(1..=50);
        let scores: Vec<f64> = (0..m).map(|_| f64::from(rng.random_range(0..=10u8)) / 10.0).collect();
        let labels: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
        if auc(&scores, &labels) != auc_pairs(&scores, &labels) {
            bad += 1;
        }
        let im = intent_metrics(&scores, &labels);
        let decisions: Vec<bool> = scores.iter().map(|&s| s >= 0.5).collect();
        let (acc, prec, rec, f1) = confusion_scores(&decisions, &labels);
        if (im.accuracy, im.precision, im.recall, im.f1) != (acc, prec, rec, f1) {
            bad += 1;
        }
        let n = rng.random_range(1..=6);
        let targets: Vec<Vec<bool>> = (0..m).map(|_| (0..n).map(|_| rng.random_bool(0.3)).collect()).collect();
        let predicted: Vec<Vec<bool>> = targets
            .iter()
            .map(|t| t.iter().map(|&v| if rng.random_bool(0.15) { !v } else { v }).collect())
            .collect();
        let rm = reason_metrics(&predicted, &targets).unwrap();
        if rm.subset_accuracy != subset_accuracy(&predicted, &targets)
            || rm.hamming_accuracy != hamming_accuracy(&predicted, &targets)
        {
            bad += 1;
        }
        for (j, c) in rm.per_class.iter().enumerate() {
            let p: Vec<bool> = predicted.iter().map(|r| r[j]).collect();
            let t: Vec<bool> = targets.iter().map(|r| r[j]).collect();
            let (_, prec, rec, f1) = confusion_scores(&p, &t);
            if (c.precision, c.recall, c.f1) != (prec, rec, f1) {
                bad += 1;
            }
        }
    }
    bad
}

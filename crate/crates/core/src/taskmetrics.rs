//! Rating-task metrics: binary and multiclass accuracy, positive-class F1,
//! rank-based ROC-AUC, MAE/RMSE, and the naive historical-average baseline.
//!
//! Binary views use the cutoff rating > 3. Parse failures are excluded
//! upstream and only reported as counts here, never imputed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Example;

/// One scored prediction joined with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub predicted: u8,
    pub truth: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<[f64; 5]>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty prediction set")]
    EmptyInput,
    #[error("empty purchase history")]
    EmptyHistory,
    #[error("rating out of range: {0}")]
    RatingOutOfRange(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

/// Flat per-run metric row, one per (run, split, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub binary_acc: f64,
    pub binary_f1: f64,
    pub binary_auc: Option<f64>,
    pub multi_acc: f64,
    pub multi_auc: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub n_evaluated: usize,
    pub n_parse_failures: usize,
}

pub const BINARY_CUTOFF: u8 = 3;

fn positive(rating: u8) -> bool {
    rating > BINARY_CUTOFF
}

fn validate(preds: &[Prediction]) -> Result<(), MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for p in preds {
        if !(1..=5).contains(&p.predicted) {
            return Err(MetricsError::RatingOutOfRange(p.predicted));
        }
        if !(1..=5).contains(&p.truth) {
            return Err(MetricsError::RatingOutOfRange(p.truth));
        }
    }
    Ok(())
}

/// Rank-based (Mann-Whitney) ROC-AUC with average ranks for ties. Returns
/// `None` when either class is absent.
pub fn rank_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
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
        // Average 1-based rank across the tie group.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }

    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let np = n_pos as f64;
    let nn = n_neg as f64;
    Some((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Binary metrics under the > 3 cutoff. F1 is for the positive class; AUC
/// uses the probability mass P(4) + P(5) over the predictions that carry
/// class probabilities.
pub fn binary_metrics(preds: &[Prediction]) -> Result<BinaryMetrics, MetricsError> {
    validate(preds)?;
    let n = preds.len() as f64;
    let mut correct = 0usize;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for p in preds {
        let yhat = positive(p.predicted);
        let y = positive(p.truth);
        if yhat == y {
            correct += 1;
        }
        match (yhat, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let accuracy = correct as f64 / n;
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };

    let with_probs: Vec<&Prediction> = preds.iter().filter(|p| p.class_probs.is_some()).collect();
    let auc = if with_probs.is_empty() {
        None
    } else {
        let scores: Vec<f64> = with_probs
            .iter()
            .map(|p| {
                let probs = p.class_probs.as_ref().expect("filtered");
                probs[3] + probs[4]
            })
            .collect();
        let labels: Vec<bool> = with_probs.iter().map(|p| positive(p.truth)).collect();
        rank_auc(&scores, &labels)
    };

    Ok(BinaryMetrics { accuracy, f1, auc })
}

/// Multiclass metrics: exact-match accuracy, MAE, RMSE, and macro-averaged
/// one-vs-rest AUC over the five classes (classes without both positives and
/// negatives in the truth are skipped).
pub fn multiclass_metrics(preds: &[Prediction]) -> Result<MulticlassMetrics, MetricsError> {
    validate(preds)?;
    let n = preds.len() as f64;
    let mut correct = 0usize;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for p in preds {
        if p.predicted == p.truth {
            correct += 1;
        }
        let d = p.predicted as f64 - p.truth as f64;
        abs_sum += d.abs();
        sq_sum += d * d;
    }
    let accuracy = correct as f64 / n;
    let mae = abs_sum / n;
    let rmse = (sq_sum / n).sqrt();

    let with_probs: Vec<&Prediction> = preds.iter().filter(|p| p.class_probs.is_some()).collect();
    let auc = if with_probs.is_empty() {
        None
    } else {
        let mut per_class = Vec::new();
        for class in 1..=5u8 {
            let scores: Vec<f64> = with_probs
                .iter()
                .map(|p| p.class_probs.as_ref().expect("filtered")[(class - 1) as usize])
                .collect();
            let labels: Vec<bool> = with_probs.iter().map(|p| p.truth == class).collect();
            if let Some(a) = rank_auc(&scores, &labels) {
                per_class.push(a);
            }
        }
        if per_class.is_empty() {
            None
        } else {
            Some(per_class.iter().sum::<f64>() / per_class.len() as f64)
        }
    };

    Ok(MulticlassMetrics {
        accuracy,
        auc,
        mae,
        rmse,
    })
}

/// How the naive baseline rounds the historical mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundingRule {
    #[default]
    HalfAwayFromZero,
    HalfToEven,
}

impl RoundingRule {
    fn round(&self, x: f64) -> f64 {
        match self {
            RoundingRule::HalfAwayFromZero => x.round(),
            RoundingRule::HalfToEven => x.round_ties_even(),
        }
    }
}

/// Predict the rounded mean of the user's historical ratings (half away from
/// zero), clamped to 1..=5.
pub fn naive_baseline(example: &Example) -> Result<u8, MetricsError> {
    let ratings: Vec<u8> = example.history.iter().map(|p| p.rating).collect();
    naive_baseline_from_ratings(&ratings)
}

/// Same as [`naive_baseline`] but from a bare rating list.
pub fn naive_baseline_from_ratings(ratings: &[u8]) -> Result<u8, MetricsError> {
    naive_baseline_with(ratings, RoundingRule::HalfAwayFromZero)
}

/// Naive baseline with an explicit rounding rule.
pub fn naive_baseline_with(ratings: &[u8], rounding: RoundingRule) -> Result<u8, MetricsError> {
    if ratings.is_empty() {
        return Err(MetricsError::EmptyHistory);
    }
    let mean = ratings.iter().map(|&r| r as f64).sum::<f64>() / ratings.len() as f64;
    Ok((rounding.round(mean) as i64).clamp(1, 5) as u8)
}

/// Assemble the full per-run report.
pub fn metric_report(
    preds: &[Prediction],
    n_parse_failures: usize,
) -> Result<MetricReport, MetricsError> {
    let binary = binary_metrics(preds)?;
    let multi = multiclass_metrics(preds)?;
    Ok(MetricReport {
        binary_acc: binary.accuracy,
        binary_f1: binary.f1,
        binary_auc: binary.auc,
        multi_acc: multi.accuracy,
        multi_auc: multi.auc,
        mae: multi.mae,
        rmse: multi.rmse,
        n_evaluated: preds.len(),
        n_parse_failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(predicted: u8, truth: u8) -> Prediction {
        Prediction {
            example_id: format!("{predicted}-{truth}"),
            predicted,
            truth,
            class_probs: None,
        }
    }

    fn pred_with_probs(predicted: u8, truth: u8, probs: [f64; 5]) -> Prediction {
        Prediction {
            class_probs: Some(probs),
            ..pred(predicted, truth)
        }
    }

    /// Exhaustive pairwise-concordance AUC used as an independent oracle.
    fn brute_force_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l)
            .map(|(s, _)| *s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| !l)
            .map(|(s, _)| *s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for &p in &pos {
            for &q in &neg {
                total += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(total / (pos.len() * neg.len()) as f64)
    }

    #[test]
    fn perfect_predictor() {
        let preds = vec![pred(1, 1), pred(4, 4), pred(5, 5), pred(2, 2)];
        let b = binary_metrics(&preds).unwrap();
        assert_eq!(b.accuracy, 1.0);
        assert_eq!(b.f1, 1.0);
        let m = multiclass_metrics(&preds).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.rmse, 0.0);
    }

    #[test]
    fn forced_extremes() {
        let preds = vec![pred(1, 5), pred(5, 1)];
        let m = multiclass_metrics(&preds).unwrap();
        assert_eq!(m.mae, 4.0);
        assert_eq!(m.rmse, 4.0);
    }

    #[test]
    fn cutoff_semantics() {
        // pred 4 / truth 2 is a false positive under the > 3 cutoff.
        let preds = vec![pred(4, 2), pred(4, 4)];
        let b = binary_metrics(&preds).unwrap();
        assert_eq!(b.accuracy, 0.5);
        assert!((b.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(binary_metrics(&[]), Err(MetricsError::EmptyInput)));
        assert!(matches!(multiclass_metrics(&[]), Err(MetricsError::EmptyInput)));
    }

    #[test]
    fn auc_absent_without_probs_or_single_class() {
        let preds = vec![pred(4, 4), pred(2, 2)];
        assert!(binary_metrics(&preds).unwrap().auc.is_none());
        let one_class = vec![
            pred_with_probs(4, 4, [0.1, 0.1, 0.1, 0.6, 0.1]),
            pred_with_probs(5, 5, [0.1, 0.1, 0.1, 0.1, 0.6]),
        ];
        assert!(binary_metrics(&one_class).unwrap().auc.is_none());
    }

    #[test]
    fn binary_auc_perfect_inverted_and_uniform() {
        let hi = [0.0, 0.0, 0.0, 0.5, 0.4];
        let lo = [0.5, 0.3, 0.1, 0.05, 0.05];
        let perfect = vec![pred_with_probs(5, 5, hi), pred_with_probs(1, 1, lo)];
        assert_eq!(binary_metrics(&perfect).unwrap().auc, Some(1.0));
        let inverted = vec![pred_with_probs(5, 5, lo), pred_with_probs(1, 1, hi)];
        assert_eq!(binary_metrics(&inverted).unwrap().auc, Some(0.0));
        let uniform = vec![
            pred_with_probs(5, 5, [0.2; 5]),
            pred_with_probs(1, 1, [0.2; 5]),
        ];
        assert_eq!(binary_metrics(&uniform).unwrap().auc, Some(0.5));
    }

    #[test]
    fn rank_auc_matches_brute_force_with_ties() {
        let scores = [0.9, 0.8, 0.8, 0.3, 0.3, 0.3, 0.1, 0.5];
        let labels = [true, true, false, true, false, false, false, true];
        let fast = rank_auc(&scores, &labels).unwrap();
        let slow = brute_force_auc(&scores, &labels).unwrap();
        assert!((fast - slow).abs() < 1e-12);
    }

    #[test]
    fn naive_baseline_rounding() {
        assert_eq!(naive_baseline_from_ratings(&[5, 5, 5, 5]).unwrap(), 5);
        assert_eq!(naive_baseline_from_ratings(&[4, 5, 4, 5]).unwrap(), 5);
        assert_eq!(naive_baseline_from_ratings(&[1, 2, 2, 2]).unwrap(), 2);
        assert!(matches!(
            naive_baseline_from_ratings(&[]),
            Err(MetricsError::EmptyHistory)
        ));
        // The alternative rule only differs on exact halves.
        assert_eq!(
            naive_baseline_with(&[4, 5, 4, 5], RoundingRule::HalfToEven).unwrap(),
            4
        );
        assert_eq!(
            naive_baseline_with(&[1, 2, 2, 2], RoundingRule::HalfToEven).unwrap(),
            2
        );
    }

    proptest! {
        #[test]
        fn rmse_at_least_mae(raw in proptest::collection::vec((1u8..=5, 1u8..=5), 1..60)) {
            let preds: Vec<Prediction> = raw.into_iter().map(|(p, t)| pred(p, t)).collect();
            let m = multiclass_metrics(&preds).unwrap();
            prop_assert!(m.rmse >= m.mae - 1e-12);
        }

        #[test]
        fn metrics_permutation_invariant(raw in proptest::collection::vec((1u8..=5, 1u8..=5), 2..40)) {
            let preds: Vec<Prediction> = raw.into_iter().map(|(p, t)| pred(p, t)).collect();
            let mut reversed = preds.clone();
            reversed.reverse();
            let a = metric_report(&preds, 0).unwrap();
            let b = metric_report(&reversed, 0).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn rank_auc_equals_brute_force(
            raw in proptest::collection::vec((0u8..=4, proptest::bool::ANY), 2..20)
        ) {
            // Quantized scores force frequent ties.
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            match (rank_auc(&scores, &labels), brute_force_auc(&scores, &labels)) {
                (Some(fast), Some(slow)) => prop_assert!((fast - slow).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "mismatch: {:?}", other),
            }
        }
    }
}

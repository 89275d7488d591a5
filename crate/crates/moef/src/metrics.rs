//! Evaluation metrics: movement labels from percentage changes, weighted
//! classification reports, and channel-averaged horizon MSE.
//!
//! Per-class precision/recall/F1 default to 0 when their denominator is 0,
//! and the aggregate numbers are support-weighted averages, so imbalanced
//! label support can legally produce an F-score outside the
//! precision/recall interval.

use crate::error::{MoefError, Result};
use serde::{Deserialize, Serialize};

/// Ternary market-movement label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MovementLabel {
    Fall,
    Neutral,
    Rise,
}

impl MovementLabel {
    pub const ALL: [MovementLabel; 3] =
        [MovementLabel::Fall, MovementLabel::Neutral, MovementLabel::Rise];

    pub fn index(self) -> usize {
        match self {
            MovementLabel::Fall => 0,
            MovementLabel::Neutral => 1,
            MovementLabel::Rise => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MovementLabel::Fall => "Fall",
            MovementLabel::Neutral => "Neutral",
            MovementLabel::Rise => "Rise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fall" => Ok(MovementLabel::Fall),
            "neutral" => Ok(MovementLabel::Neutral),
            "rise" => Ok(MovementLabel::Rise),
            other => Err(MoefError::domain(format!(
                "unknown movement label {other:?} (expected fall, neutral, or rise)"
            ))),
        }
    }
}

/// Percentage change of closing prices: `(c_t - c_prev) / c_prev * 100`.
pub fn pct_change(close_t: f64, close_prev: f64) -> Result<f64> {
    if close_prev == 0.0 {
        return Err(MoefError::domain(
            "percentage change undefined for a zero previous close",
        ));
    }
    Ok((close_t - close_prev) / close_prev * 100.0)
}

/// Threshold classification of a percentage change; the +-0.5% boundaries
/// belong to Neutral.
pub fn label_from_pct(pct: f64) -> MovementLabel {
    if pct < -0.5 {
        MovementLabel::Fall
    } else if pct > 0.5 {
        MovementLabel::Rise
    } else {
        MovementLabel::Neutral
    }
}

/// Row-major confusion counts: rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class support: the row sums.
    pub fn supports(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Metrics for a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Support-weighted classification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

/// Builds the report from index-encoded labels over `class_names`.
pub fn classification_report_indexed(
    truth: &[usize],
    pred: &[usize],
    class_names: &[&str],
) -> Result<ClassificationReport> {
    if truth.len() != pred.len() {
        return Err(MoefError::sequence(format!(
            "label sequences differ in length: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(MoefError::sequence("cannot score an empty label sequence"));
    }
    let k = class_names.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (t, p) in truth.iter().zip(pred) {
        if *t >= k || *p >= k {
            return Err(MoefError::domain(format!(
                "label index out of range: true={t}, pred={p}, classes={k}"
            )));
        }
        counts[*t][*p] += 1;
    }

    let total: u64 = truth.len() as u64;
    let mut correct = 0u64;
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = counts[c][c];
        correct += tp;
        let support: u64 = counts[c].iter().sum();
        let predicted: u64 = (0..k).map(|r| counts[r][c]).sum();
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            name: class_names[c].to_string(),
            precision,
            recall,
            f1,
            support,
        });
    }

    let weighted = |f: fn(&ClassMetrics) -> f64| -> f64 {
        per_class
            .iter()
            .map(|m| m.support as f64 * f(m))
            .sum::<f64>()
            / total as f64
    };

    Ok(ClassificationReport {
        f1: weighted(|m| m.f1),
        accuracy: correct as f64 / total as f64,
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        per_class,
        confusion: ConfusionMatrix {
            counts,
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
        },
    })
}

/// Support-weighted report over the ternary movement labels.
pub fn weighted_classification_report(
    truth: &[MovementLabel],
    pred: &[MovementLabel],
) -> Result<ClassificationReport> {
    let names: Vec<&str> = MovementLabel::ALL.iter().map(|l| l.name()).collect();
    let t: Vec<usize> = truth.iter().map(|l| l.index()).collect();
    let p: Vec<usize> = pred.iter().map(|l| l.index()).collect();
    classification_report_indexed(&t, &p, &names)
}

/// Channel-averaged squared-norm forecasting error:
/// `(1/C) sum_c sum_h (truth[h][c] - pred[h][c])^2`.
pub fn horizon_mse(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(MoefError::sequence(format!(
            "horizon lengths differ: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(MoefError::sequence("cannot score an empty horizon"));
    }
    let channels = truth[0].len();
    if channels == 0 {
        return Err(MoefError::sequence("horizon rows must be nonempty"));
    }
    let mut acc = 0.0;
    for (row_t, row_p) in truth.iter().zip(pred) {
        if row_t.len() != channels || row_p.len() != channels {
            return Err(MoefError::sequence("ragged horizon rows"));
        }
        for (a, b) in row_t.iter().zip(row_p) {
            acc += (a - b) * (a - b);
        }
    }
    Ok(acc / channels as f64)
}

/// Rounds to 4 decimal places, the report convention.
pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use MovementLabel::{Fall, Neutral, Rise};

    #[test]
    fn label_thresholds() {
        assert_eq!(label_from_pct(0.6), Rise);
        assert_eq!(label_from_pct(0.5), Neutral);
        assert_eq!(label_from_pct(-0.5), Neutral);
        assert_eq!(label_from_pct(-0.7), Fall);
        assert_eq!(label_from_pct(0.0), Neutral);
    }

    #[test]
    fn pct_change_examples() {
        assert_eq!(pct_change(101.0, 100.0).unwrap(), 1.0);
        assert_eq!(pct_change(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(pct_change(99.0, 100.0).unwrap(), -1.0);
        assert!(pct_change(1.0, 0.0).is_err());
    }

    #[test]
    fn report_hand_computed_fixture() {
        let truth = [Rise, Rise, Fall];
        let pred = [Rise, Fall, Fall];
        let report = weighted_classification_report(&truth, &pred).unwrap();
        let rise = &report.per_class[Rise.index()];
        let fall = &report.per_class[Fall.index()];
        assert_relative_eq!(rise.f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(fall.f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(report.f1, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(report.accuracy, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(report.confusion.counts[Rise.index()][Rise.index()], 1);
        assert_eq!(report.confusion.counts[Rise.index()][Fall.index()], 1);
        assert_eq!(report.confusion.counts[Fall.index()][Fall.index()], 1);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let labels = [Rise, Fall, Neutral, Rise, Neutral];
        let report = weighted_classification_report(&labels, &labels).unwrap();
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
    }

    #[test]
    fn degenerate_always_neutral_predictor() {
        let truth = [Rise, Neutral, Fall, Neutral, Neutral, Rise];
        let pred = [Neutral; 6];
        let report = weighted_classification_report(&truth, &pred).unwrap();
        let neutral = &report.per_class[Neutral.index()];
        assert_eq!(neutral.recall, 1.0);
        assert_eq!(report.per_class[Rise.index()].f1, 0.0);
        assert_eq!(report.per_class[Fall.index()].f1, 0.0);
        assert_eq!(report.per_class[Rise.index()].precision, 0.0);
    }

    #[test]
    fn weighted_recall_equals_accuracy() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(31);
        for _ in 0..50 {
            let len = rng.random_range(1..200);
            let truth: Vec<MovementLabel> = (0..len)
                .map(|_| MovementLabel::ALL[rng.random_range(0..3)])
                .collect();
            let pred: Vec<MovementLabel> = (0..len)
                .map(|_| MovementLabel::ALL[rng.random_range(0..3)])
                .collect();
            let report = weighted_classification_report(&truth, &pred).unwrap();
            assert_relative_eq!(report.recall, report.accuracy, epsilon = 1e-12);
            // Row sums equal per-class supports.
            for (c, support) in report.confusion.supports().iter().enumerate() {
                assert_eq!(
                    *support,
                    truth.iter().filter(|l| l.index() == c).count() as u64
                );
            }
        }
    }

    #[test]
    fn metrics_invariant_under_relabeling() {
        let truth = [0usize, 1, 2, 1, 0, 2, 2];
        let pred = [0usize, 2, 2, 1, 1, 0, 2];
        let base = classification_report_indexed(&truth, &pred, &["a", "b", "c"]).unwrap();
        // Swap classes 0 and 2 consistently.
        let swap = |x: usize| match x {
            0 => 2,
            2 => 0,
            other => other,
        };
        let truth2: Vec<usize> = truth.iter().map(|x| swap(*x)).collect();
        let pred2: Vec<usize> = pred.iter().map(|x| swap(*x)).collect();
        let swapped = classification_report_indexed(&truth2, &pred2, &["c", "b", "a"]).unwrap();
        assert_relative_eq!(base.f1, swapped.f1, epsilon = 1e-15);
        assert_relative_eq!(base.accuracy, swapped.accuracy, epsilon = 1e-15);
        assert_relative_eq!(base.precision, swapped.precision, epsilon = 1e-15);
    }

    #[test]
    fn report_rejects_mismatched_lengths() {
        let err = weighted_classification_report(&[Rise], &[Rise, Fall]).unwrap_err();
        assert!(matches!(err, MoefError::Sequence(_)));
    }

    #[test]
    fn horizon_mse_examples() {
        let truth = vec![vec![1.0], vec![2.0]];
        assert_eq!(horizon_mse(&truth, &truth).unwrap(), 0.0);

        let zeros = vec![vec![0.0], vec![0.0]];
        let ones = vec![vec![1.0], vec![1.0]];
        assert_eq!(horizon_mse(&zeros, &ones).unwrap(), 2.0);

        // Channel errors 2 and 4 average to 3.
        let t = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let p = vec![vec![1.0, 2.0], vec![1.0, 0.0]];
        assert_eq!(horizon_mse(&t, &p).unwrap(), 3.0);

        assert!(horizon_mse(&truth, &zeros[..1].to_vec()).is_err());
    }

    #[test]
    fn round4_formats_to_report_precision() {
        assert_eq!(round4(0.123456), 0.1235);
        assert_eq!(round4(2.0 / 3.0), 0.6667);
    }
}

//! Evaluation metrics: confusion matrix, accuracy, per-class
//! precision/recall/F1 and the macro F1 (unweighted mean over both
//! classes; a class absent from predictions and truth contributes 0).

use crate::error::{Error, Result};
use crate::model::{ConcadModel, ModelInput};
use crate::signal::segments::SegmentBundle;
use crate::tensor::Mode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: [ClassMetrics; 2],
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; 2]; 2],
    pub n_eval: usize,
}

/// Metrics from a filled confusion matrix (`confusion[true][predicted]`).
pub fn metrics_from_confusion(confusion: [[usize; 2]; 2]) -> Result<MetricsReport> {
    let n: usize = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = [ClassMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    }; 2];
    for c in 0..2 {
        let tp = confusion[c][c];
        let predicted: usize = confusion[0][c] + confusion[1][c];
        let actual: usize = confusion[c][0] + confusion[c][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class[c] = ClassMetrics {
            precision,
            recall,
            f1,
        };
    }
    Ok(MetricsReport {
        accuracy: (confusion[0][0] + confusion[1][1]) as f64 / n as f64,
        macro_f1: (per_class[0].f1 + per_class[1].f1) / 2.0,
        per_class,
        confusion,
        n_eval: n,
    })
}

/// Metrics from per-instance predictions.
pub fn metrics_from_predictions(truth: &[usize], predicted: &[usize]) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(Error::shape(
            "metrics",
            format!("{} truths vs {} predictions", truth.len(), predicted.len()),
        ));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t > 1 || p > 1 {
            return Err(Error::Data(format!("class out of range: true {t}, predicted {p}")));
        }
        confusion[t][p] += 1;
    }
    metrics_from_confusion(confusion)
}

/// Argmax class per row of `[n, 2]` probabilities (first index wins ties).
pub fn argmax_classes(probs: &crate::tensor::Tensor) -> Vec<usize> {
    (0..probs.dim(0))
        .map(|i| {
            let row = &probs.data()[i * 2..(i + 1) * 2];
            usize::from(row[1] > row[0])
        })
        .collect()
}

/// Evaluate a frozen model on bundles (inference mode, no projection).
pub fn evaluate(
    model: &ConcadModel,
    bundles: &[SegmentBundle],
    batch_size: usize,
) -> Result<MetricsReport> {
    if bundles.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let batch_size = batch_size.max(1);
    let mut truth = Vec::with_capacity(bundles.len());
    let mut predicted = Vec::with_capacity(bundles.len());
    for chunk in bundles.chunks(batch_size) {
        let refs: Vec<&SegmentBundle> = chunk.iter().collect();
        let input = ModelInput::from_bundles(&refs, &model.standardizer, &model.config)?;
        let (out, _) = model.forward(&input, Mode::Infer, None, false)?;
        truth.extend(input.labels.iter().copied());
        predicted.extend(argmax_classes(&out.probs));
    }
    metrics_from_predictions(&truth, &predicted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_on_balanced_set() {
        let truth: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let report = metrics_from_predictions(&truth, &truth).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.macro_f1, 1.0);
        assert_eq!(report.n_eval, 20);
        assert_eq!(report.confusion, [[10, 0], [0, 10]]);
    }

    #[test]
    fn majority_predictor_on_imbalanced_set() {
        // 70 normal / 30 apnea, everything predicted normal.
        let truth: Vec<usize> = std::iter::repeat(0)
            .take(70)
            .chain(std::iter::repeat(1).take(30))
            .collect();
        let predicted = vec![0usize; 100];
        let report = metrics_from_predictions(&truth, &predicted).unwrap();
        assert!((report.accuracy - 0.7).abs() < 1e-12);
        // Majority class F1 = 2*0.7/1.7; minority contributes 0.
        assert!((report.macro_f1 - 0.4117647058823529).abs() < 1e-12);
        assert!(report.macro_f1 < report.accuracy);
    }

    #[test]
    fn confusion_hand_case_matches_external_oracle() {
        // Cross-checked against scikit-learn's accuracy_score/f1_score.
        let report = metrics_from_confusion([[50, 10], [5, 35]]).unwrap();
        assert!((report.accuracy - 0.85).abs() < 1e-12);
        assert!((report.macro_f1 - 0.8465473145780051).abs() < 1e-12);
        assert!((report.per_class[0].precision - 0.9090909090909091).abs() < 1e-12);
        assert!((report.per_class[0].recall - 0.8333333333333334).abs() < 1e-12);
        assert!((report.per_class[0].f1 - 0.8695652173913043).abs() < 1e-12);
        assert!((report.per_class[1].f1 - 0.8235294117647058).abs() < 1e-12);
        assert_eq!(report.n_eval, 100);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(metrics_from_confusion([[0, 0], [0, 0]]).is_err());
        assert!(metrics_from_predictions(&[], &[]).is_err());
    }

    #[test]
    fn confusion_sums_to_n_eval() {
        let truth = [0, 1, 1, 0, 1];
        let predicted = [1, 1, 0, 0, 1];
        let report = metrics_from_predictions(&truth, &predicted).unwrap();
        let total: usize = report.confusion.iter().flatten().sum();
        assert_eq!(total, report.n_eval);
        let trace = report.confusion[0][0] + report.confusion[1][1];
        assert!((report.accuracy - trace as f64 / 5.0).abs() < 1e-12);
    }
}

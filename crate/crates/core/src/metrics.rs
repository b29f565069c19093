//! Evaluation metrics: accuracy, confusion matrix, per-class and macro F1.

use crate::loss::{LossError, NUM_CLASSES};

/// Metrics for one dataset split. Confusion rows are true classes, columns
/// predicted classes. `per_class_f1` is `None` for a class with zero true
/// and zero predicted samples; such classes are excluded from the macro mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub per_class_f1: [Option<f64>; NUM_CLASSES],
    pub macro_f1: f64,
    pub samples: usize,
}

impl MetricsReport {
    /// Assemble a report from predictions, labels, and a precomputed total loss.
    pub fn compute(
        pred_labels: &[usize],
        true_labels: &[usize],
        total_loss: f64,
    ) -> Result<MetricsReport, LossError> {
        let confusion = confusion_matrix(pred_labels, true_labels)?;
        let (per_class_f1, macro_f1) = f1_scores(&confusion);
        let samples = true_labels.len();
        Ok(MetricsReport {
            mean_loss: if samples == 0 { 0.0 } else { total_loss / samples as f64 },
            accuracy: accuracy(pred_labels, true_labels)?,
            confusion,
            per_class_f1,
            macro_f1,
            samples,
        })
    }

    /// Plain-text rendering used by the CLI and written report files.
    pub fn render(&self, split: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!("split: {split}\n"));
        s.push_str(&format!("samples: {}\n", self.samples));
        s.push_str(&format!("mean_loss: {}\n", self.mean_loss));
        s.push_str(&format!("accuracy: {}\n", self.accuracy));
        s.push_str(&format!("macro_f1: {}\n", self.macro_f1));
        for (c, f1) in self.per_class_f1.iter().enumerate() {
            match f1 {
                Some(v) => s.push_str(&format!("f1_class_{c}: {v}\n")),
                None => s.push_str(&format!("f1_class_{c}: -\n")),
            }
        }
        s.push_str("confusion (rows true, cols predicted):\n");
        for row in &self.confusion {
            s.push_str(&format!("  {} {} {}\n", row[0], row[1], row[2]));
        }
        s
    }
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<(), LossError> {
    if pred.len() != truth.len() {
        return Err(LossError::ShapeMismatch {
            message: format!(
                "prediction count {} != label count {}",
                pred.len(),
                truth.len()
            ),
        });
    }
    for (index, &label) in pred.iter().chain(truth.iter()).enumerate() {
        if label >= NUM_CLASSES {
            return Err(LossError::LabelOutOfRange {
                index: index % pred.len().max(1),
                label,
            });
        }
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(pred_labels: &[usize], true_labels: &[usize]) -> Result<f64, LossError> {
    check_lengths(pred_labels, true_labels)?;
    if true_labels.is_empty() {
        return Ok(0.0);
    }
    let hits = pred_labels
        .iter()
        .zip(true_labels)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / true_labels.len() as f64)
}

/// Entry (t, p) counts samples with true class t predicted as p.
pub fn confusion_matrix(
    pred_labels: &[usize],
    true_labels: &[usize],
) -> Result<[[usize; NUM_CLASSES]; NUM_CLASSES], LossError> {
    check_lengths(pred_labels, true_labels)?;
    let mut m = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &t) in pred_labels.iter().zip(true_labels) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-class F1 = 2PR/(P+R) from the confusion matrix, with precision or
/// recall taken as 0 when their denominator is 0. A class with zero true and
/// zero predicted samples has no F1 and is left out of the macro mean.
pub fn f1_scores(
    confusion: &[[usize; NUM_CLASSES]; NUM_CLASSES],
) -> ([Option<f64>; NUM_CLASSES], f64) {
    let mut per_class = [None; NUM_CLASSES];
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..NUM_CLASSES {
        let tp = confusion[c][c];
        let true_count: usize = confusion[c].iter().sum();
        let pred_count: usize = (0..NUM_CLASSES).map(|t| confusion[t][c]).sum();
        if true_count == 0 && pred_count == 0 {
            continue;
        }
        let precision = if pred_count == 0 {
            0.0
        } else {
            tp as f64 / pred_count as f64
        };
        let recall = if true_count == 0 {
            0.0
        } else {
            tp as f64 / true_count as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class[c] = Some(f1);
        sum += f1;
        counted += 1;
    }
    let macro_f1 = if counted == 0 { 0.0 } else { sum / counted as f64 };
    (per_class, macro_f1)
}

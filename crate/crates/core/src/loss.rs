//! Categorical cross-entropy and its polythene-weighted variant.
//!
//! The plain loss is -sum_j sum_i y_ji * log(yhat_ji), summed over the batch
//! (no mean; the trainer divides by batch size before the optimizer step).
//! The weighted variant multiplies the polythene-class term (class 2) by
//! lambda, making misclassified polythene samples cost more. Predicted
//! probabilities are clamped to [1e-12, 1] before the log.

use crate::ops::softmax;
use crate::tensor::Tensor;
use std::fmt;

/// Number of classes: 0 non-plastic, 1 other plastic, 2 polythene.
pub const NUM_CLASSES: usize = 3;

/// Index of the polythene class.
pub const POLYTHENE_CLASS: usize = 2;

/// Probability floor applied before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    ShapeMismatch { message: String },
    LabelOutOfRange { index: usize, label: usize },
    NotOneHot { row: usize },
    InvalidLambda { lambda: f64 },
    InvalidThreshold { threshold: f64 },
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::ShapeMismatch { message } => write!(f, "{message}"),
            LossError::LabelOutOfRange { index, label } => {
                write!(f, "label {label} at position {index} outside {{0,1,2}}")
            }
            LossError::NotOneHot { row } => {
                write!(f, "target row {row} is not one-hot")
            }
            LossError::InvalidLambda { lambda } => {
                write!(f, "lambda must be positive, got {lambda}")
            }
            LossError::InvalidThreshold { threshold } => {
                write!(f, "threshold must be in [0, 1], got {threshold}")
            }
        }
    }
}

impl std::error::Error for LossError {}

/// Multiplicative weight on the polythene class's loss term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeighting {
    pub lambda: f64,
    pub polythene_class: usize,
}

impl LossWeighting {
    /// Lambda must be positive. Values above 10 still work but defeat the
    /// other two classes; callers surface a warning via [`Self::is_extreme`].
    pub fn new(lambda: f64) -> Result<LossWeighting, LossError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(LossError::InvalidLambda { lambda });
        }
        Ok(LossWeighting {
            lambda,
            polythene_class: POLYTHENE_CLASS,
        })
    }

    pub fn is_extreme(&self) -> bool {
        self.lambda > 10.0
    }
}

impl Default for LossWeighting {
    fn default() -> Self {
        LossWeighting {
            lambda: 1.25,
            polythene_class: POLYTHENE_CLASS,
        }
    }
}

fn validate_labels(labels: &[usize], num_classes: usize) -> Result<(), LossError> {
    for (index, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(LossError::LabelOutOfRange { index, label });
        }
    }
    Ok(())
}

/// One-hot encode labels into an M x num_classes tensor.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor, LossError> {
    validate_labels(labels, num_classes)?;
    let mut out = Tensor::zeros(vec![labels.len(), num_classes]);
    for (j, &label) in labels.iter().enumerate() {
        out.data_mut()[j * num_classes + label] = 1.0;
    }
    Ok(out)
}

fn check_same_2d(y: &Tensor, yhat: &Tensor) -> Result<(usize, usize), LossError> {
    if y.rank() != 2 || yhat.rank() != 2 || y.shape() != yhat.shape() {
        return Err(LossError::ShapeMismatch {
            message: format!(
                "targets {:?} and predictions {:?} must be identical rank-2 shapes",
                y.shape(),
                yhat.shape()
            ),
        });
    }
    Ok((y.shape()[0], y.shape()[1]))
}

fn clamped_log(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0).ln()
}

/// Plain categorical cross-entropy, summed over the batch.
pub fn cce_loss(y: &Tensor, yhat: &Tensor) -> Result<f64, LossError> {
    let (m, n) = check_same_2d(y, yhat)?;
    let mut loss = 0.0;
    for j in 0..m {
        for i in 0..n {
            let t = y.data()[j * n + i];
            if t != 0.0 {
                loss -= t * clamped_log(yhat.data()[j * n + i]);
            }
        }
    }
    Ok(loss)
}

/// Cross-entropy with the polythene-class term scaled by lambda.
pub fn weighted_cce_loss(y: &Tensor, yhat: &Tensor, w: &LossWeighting) -> Result<f64, LossError> {
    let (m, n) = check_same_2d(y, yhat)?;
    let mut loss = 0.0;
    for j in 0..m {
        for i in 0..n {
            let t = y.data()[j * n + i];
            if t != 0.0 {
                let weight = if i == w.polythene_class { w.lambda } else { 1.0 };
                loss -= weight * t * clamped_log(yhat.data()[j * n + i]);
            }
        }
    }
    Ok(loss)
}

/// Index of the single 1.0 in a one-hot row, or an error.
fn one_hot_index(y: &Tensor, row: usize) -> Result<usize, LossError> {
    let n = y.shape()[1];
    let mut hot = None;
    for i in 0..n {
        let v = y.data()[row * n + i];
        if v == 1.0 {
            if hot.is_some() {
                return Err(LossError::NotOneHot { row });
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(LossError::NotOneHot { row });
        }
    }
    hot.ok_or(LossError::NotOneHot { row })
}

/// Fused weighted cross-entropy through softmax.
///
/// Returns the batch-summed loss and its gradient with respect to the
/// logits: for a one-hot row of class c with weight w_c in {1, lambda},
/// the gradient row is w_c * (softmax(row) - y_row).
pub fn softmax_loss_grad(
    y: &Tensor,
    logits: &Tensor,
    w: &LossWeighting,
) -> Result<(f64, Tensor), LossError> {
    let (m, n) = check_same_2d(y, logits)?;
    let probs = softmax(logits).map_err(|e| LossError::ShapeMismatch {
        message: e.to_string(),
    })?;
    let mut dlogits = Tensor::zeros(vec![m, n]);
    let mut loss = 0.0;
    for j in 0..m {
        let class = one_hot_index(y, j)?;
        let weight = if class == w.polythene_class { w.lambda } else { 1.0 };
        loss -= weight * clamped_log(probs.data()[j * n + class]);
        for i in 0..n {
            let p = probs.data()[j * n + i];
            let t = y.data()[j * n + i];
            dlogits.data_mut()[j * n + i] = weight * (p - t);
        }
    }
    Ok((loss, dlogits))
}

/// Pick a class from one probability row. With a threshold, class 2 wins
/// whenever its probability reaches the threshold; otherwise plain argmax
/// (first index on exact ties).
pub fn decide(probs: &[f64], threshold: Option<f64>) -> Result<usize, LossError> {
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(LossError::InvalidThreshold { threshold: t });
        }
        if probs[POLYTHENE_CLASS] >= t {
            return Ok(POLYTHENE_CLASS);
        }
    }
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}

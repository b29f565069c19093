//! Finite-difference verification of backward passes.
//!
//! A backward implementation is checked by comparing its analytic gradients
//! against central differences of a scalar-valued function, computed in f64
//! with step [`FD_STEP`]. Relative error uses max(1, |analytic|, |numeric|)
//! in the denominator so that near-zero gradients are compared absolutely.

use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Worst disagreement found by a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Which parameter and flat element index disagreed most.
    pub worst: String,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            worst: String::from("(no elements)"),
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0_f64.max(a.abs()).max(n.abs())
}

/// Central-difference gradient of `f` with respect to `inputs[which]`.
pub fn numeric_grad(
    inputs: &[Tensor],
    which: usize,
    f: &mut dyn FnMut(&[Tensor]) -> f64,
) -> Tensor {
    let mut work: Vec<Tensor> = inputs.to_vec();
    let len = inputs[which].len();
    let mut grad = Tensor::zeros(inputs[which].shape().to_vec());
    for i in 0..len {
        let orig = work[which].data()[i];
        work[which].data_mut()[i] = orig + FD_STEP;
        let plus = f(&work);
        work[which].data_mut()[i] = orig - FD_STEP;
        let minus = f(&work);
        work[which].data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    grad
}

/// Compare analytic gradients against central differences of `f`.
///
/// `inputs` are the differentiable tensors, `analytic[i]` the claimed
/// gradient of `f` with respect to `inputs[i]`, and `names[i]` a label for
/// diagnostics. Returns the worst relative error over every element.
pub fn grad_check(
    inputs: &[Tensor],
    analytic: &[Tensor],
    names: &[&str],
    f: &mut dyn FnMut(&[Tensor]) -> f64,
) -> GradCheckReport {
    assert_eq!(inputs.len(), analytic.len());
    assert_eq!(inputs.len(), names.len());
    let mut report = GradCheckReport::empty();
    for which in 0..inputs.len() {
        let numeric = numeric_grad(inputs, which, f);
        for i in 0..numeric.len() {
            let a = analytic[which].data()[i];
            let n = numeric.data()[i];
            let e = rel_err(a, n);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!("{}[{}]", names[which], i);
                report.analytic_at_worst = a;
                report.numeric_at_worst = n;
            }
        }
    }
    report
}

/// Fixed random weights used to collapse a tensor-valued op to a scalar so
/// its gradient can be finite-differenced.
pub fn scalar_probe(shape: &[usize], rng: &mut crate::rng::Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), || rng.uniform(-1.0, 1.0))
}

/// Weighted sum of all elements under a probe tensor.
pub fn weighted_sum(t: &Tensor, probe: &Tensor) -> f64 {
    t.data()
        .iter()
        .zip(probe.data())
        .map(|(a, b)| a * b)
        .sum()
}

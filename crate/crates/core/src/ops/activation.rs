//! Elementwise and row-wise activations.

use super::OpError;
use crate::tensor::Tensor;

/// Elementwise max(x, 0).
pub fn relu(input: &Tensor) -> Tensor {
    Tensor::new(
        input.shape().to_vec(),
        input.data().iter().map(|&x| x.max(0.0)).collect(),
    )
    .expect("shape unchanged")
}

/// Upstream gradient passes where the forward input was > 0, zero elsewhere.
pub fn relu_backward(input: &Tensor, dout: &Tensor) -> Result<Tensor, OpError> {
    if input.shape() != dout.shape() {
        return Err(OpError::shape(
            "relu_backward",
            format!(
                "dout shape {:?} != input shape {:?}",
                dout.shape(),
                input.shape()
            ),
        ));
    }
    Ok(Tensor::new(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(dout.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    )
    .expect("shape unchanged"))
}

/// Row-wise softmax over an N x K tensor, computed with per-row max
/// subtraction so huge logits cannot overflow.
pub fn softmax(logits: &Tensor) -> Result<Tensor, OpError> {
    if logits.rank() != 2 {
        return Err(OpError::shape(
            "softmax",
            format!("logits must be rank 2 (N x K), got rank {}", logits.rank()),
        ));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Tensor::zeros(vec![n, k]);
    let xd = logits.data();
    let od = out.data_mut();
    for ni in 0..n {
        let row = &xd[ni * k..(ni + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &x) in row.iter().enumerate() {
            let e = (x - max).exp();
            od[ni * k + j] = e;
            sum += e;
        }
        for j in 0..k {
            od[ni * k + j] /= sum;
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn relu_sign_cases() {
        let input = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&input).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_identity_on_nonnegatives() {
        let mut rng = Rng::new(1);
        let input = Tensor::from_fn(vec![4, 5], || rng.uniform(0.0, 3.0));
        assert_eq!(relu(&input).data(), input.data());
    }

    #[test]
    fn relu_backward_masks_gradient() {
        let input = Tensor::new(vec![4], vec![-2.0, -0.5, 0.5, 3.0]).unwrap();
        let dout = Tensor::new(vec![4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let din = relu_backward(&input, &dout).unwrap();
        assert_eq!(din.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_row() {
        let logits = Tensor::zeros(vec![1, 3]);
        let p = softmax(&logits).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariance_bitwise() {
        // dyadic values so that adding the shift is exact in f64
        let base = Tensor::new(vec![1, 3], vec![0.5, -1.25, 2.0]).unwrap();
        let shifted = Tensor::new(vec![1, 3], vec![512.5, 510.75, 514.0]).unwrap();
        let a = softmax(&base).unwrap();
        let b = softmax(&shifted).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn softmax_large_logit_is_stable() {
        let logits = Tensor::new(vec![1, 3], vec![1000.0, 0.0, 0.0]).unwrap();
        let p = softmax(&logits).unwrap();
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        assert!(p.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(2);
        let logits = Tensor::from_fn(vec![8, 3], || rng.uniform(-20.0, 20.0));
        let p = softmax(&logits).unwrap();
        for ni in 0..8 {
            let s: f64 = p.data()[ni * 3..(ni + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

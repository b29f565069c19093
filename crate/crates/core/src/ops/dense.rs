//! Fully connected layer.

use super::OpError;
use crate::tensor::Tensor;

pub struct DenseGrads {
    pub dinput: Tensor,
    pub dweights: Tensor,
    pub dbias: Tensor,
}

/// Affine map per row: `input` (N x D) times `weights` (D x K) plus `bias` (K).
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, OpError> {
    const OP: &str = "dense";
    if input.rank() != 2 || weights.rank() != 2 {
        return Err(OpError::shape(
            OP,
            format!(
                "input and weights must be rank 2, got {} and {}",
                input.rank(),
                weights.rank()
            ),
        ));
    }
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (wd, k) = (weights.shape()[0], weights.shape()[1]);
    if wd != d {
        return Err(OpError::shape(
            OP,
            format!("inner extents disagree: input has {d} features, weights expect {wd}"),
        ));
    }
    if bias.shape() != [k] {
        return Err(OpError::shape(
            OP,
            format!("bias extent {:?} != output extent [{k}]", bias.shape()),
        ));
    }

    let mut out = Tensor::zeros(vec![n, k]);
    let xd = input.data();
    let wdat = weights.data();
    let bd = bias.data();
    let od = out.data_mut();
    for ni in 0..n {
        let orow = ni * k;
        od[orow..orow + k].copy_from_slice(bd);
        for di in 0..d {
            let x = xd[ni * d + di];
            if x == 0.0 {
                continue;
            }
            let wrow = di * k;
            for ki in 0..k {
                od[orow + ki] += x * wdat[wrow + ki];
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

/// Gradients of [`dense`].
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
) -> Result<DenseGrads, OpError> {
    const OP: &str = "dense_backward";
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (wd, k) = (weights.shape()[0], weights.shape()[1]);
    if wd != d {
        return Err(OpError::shape(
            OP,
            format!("inner extents disagree: input has {d} features, weights expect {wd}"),
        ));
    }
    if dout.shape() != [n, k] {
        return Err(OpError::shape(
            OP,
            format!("dout shape {:?} != expected [{n}, {k}]", dout.shape()),
        ));
    }

    let mut dinput = Tensor::zeros(vec![n, d]);
    let mut dweights = Tensor::zeros(vec![d, k]);
    let mut dbias = Tensor::zeros(vec![k]);
    let xd = input.data();
    let wdat = weights.data();
    let gd = dout.data();
    let dxd = dinput.data_mut();
    let dwd = dweights.data_mut();
    let dbd = dbias.data_mut();

    for ni in 0..n {
        let grow = ni * k;
        for ki in 0..k {
            dbd[ki] += gd[grow + ki];
        }
        for di in 0..d {
            let x = xd[ni * d + di];
            let wrow = di * k;
            let mut acc = 0.0;
            for ki in 0..k {
                let g = gd[grow + ki];
                acc += g * wdat[wrow + ki];
                dwd[wrow + ki] += g * x;
            }
            dxd[ni * d + di] += acc;
        }
    }
    Ok(DenseGrads {
        dinput,
        dweights,
        dbias,
    })
}

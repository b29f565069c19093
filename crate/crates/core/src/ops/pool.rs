//! Spatial pooling.

use super::OpError;
use crate::tensor::Tensor;

/// 2x2 non-overlapping window maxima. Spatial extents must be even.
pub fn maxpool2(input: &Tensor) -> Result<Tensor, OpError> {
    const OP: &str = "maxpool2";
    if input.rank() != 4 {
        return Err(OpError::shape(
            OP,
            format!("input must be rank 4, got rank {}", input.rank()),
        ));
    }
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(OpError::shape(
            OP,
            format!("spatial extents must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let xd = input.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let xbase = ((ni * c + ci) * h) * w;
            let obase = ((ni * c + ci) * oh) * ow;
            for ohi in 0..oh {
                for owi in 0..ow {
                    let r0 = xbase + (2 * ohi) * w + 2 * owi;
                    let r1 = r0 + w;
                    let m = xd[r0].max(xd[r0 + 1]).max(xd[r1]).max(xd[r1 + 1]);
                    od[obase + ohi * ow + owi] = m;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`maxpool2`]: each window's upstream gradient goes to the
/// window's maximum element, first in row-major order on ties.
pub fn maxpool2_backward(input: &Tensor, dout: &Tensor) -> Result<Tensor, OpError> {
    const OP: &str = "maxpool2_backward";
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(OpError::shape(
            OP,
            format!("spatial extents must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    if dout.shape() != [n, c, oh, ow] {
        return Err(OpError::shape(
            OP,
            format!("dout shape {:?} != expected [{n}, {c}, {oh}, {ow}]", dout.shape()),
        ));
    }
    let mut dinput = Tensor::zeros(vec![n, c, h, w]);
    let xd = input.data();
    let gd = dout.data();
    let dxd = dinput.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let xbase = ((ni * c + ci) * h) * w;
            let obase = ((ni * c + ci) * oh) * ow;
            for ohi in 0..oh {
                for owi in 0..ow {
                    let r0 = xbase + (2 * ohi) * w + 2 * owi;
                    // row-major window order; strict > keeps the first maximum
                    let idxs = [r0, r0 + 1, r0 + w, r0 + w + 1];
                    let mut best = idxs[0];
                    for &i in &idxs[1..] {
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    dxd[best] += gd[obase + ohi * ow + owi];
                }
            }
        }
    }
    Ok(dinput)
}

/// Per-channel spatial mean: N x C x H x W -> N x C.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, OpError> {
    if input.rank() != 4 {
        return Err(OpError::shape(
            "global_avg_pool",
            format!("input must be rank 4, got rank {}", input.rank()),
        ));
    }
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let hw = (h * w) as f64;
    let mut out = Tensor::zeros(vec![n, c]);
    let xd = input.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = ((ni * c + ci) * h) * w;
            let sum: f64 = xd[base..base + h * w].iter().sum();
            od[ni * c + ci] = sum / hw;
        }
    }
    Ok(out)
}

/// Gradient of [`global_avg_pool`]: spreads each channel gradient evenly.
pub fn global_avg_pool_backward(
    input_shape: &[usize],
    dout: &Tensor,
) -> Result<Tensor, OpError> {
    const OP: &str = "global_avg_pool_backward";
    if input_shape.len() != 4 {
        return Err(OpError::shape(
            OP,
            format!("input shape must be rank 4, got rank {}", input_shape.len()),
        ));
    }
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    if dout.shape() != [n, c] {
        return Err(OpError::shape(
            OP,
            format!("dout shape {:?} != expected [{n}, {c}]", dout.shape()),
        ));
    }
    let hw = (h * w) as f64;
    let mut dinput = Tensor::zeros(vec![n, c, h, w]);
    let gd = dout.data();
    let dxd = dinput.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let g = gd[ni * c + ci] / hw;
            let base = ((ni * c + ci) * h) * w;
            for v in dxd[base..base + h * w].iter_mut() {
                *v = g;
            }
        }
    }
    Ok(dinput)
}

//! Standard, depthwise, and pointwise convolutions with their backward passes.
//!
//! These are direct (loop) implementations. Output extents must divide
//! exactly: H' = (H + 2*pad - kh) / stride + 1 with no remainder, otherwise
//! the call is rejected. Padding is zero-fill and the operation is
//! cross-correlation, as is conventional for CNN layers.

use super::OpError;
use crate::tensor::Tensor;

/// Gradients of [`conv2d`] with respect to its inputs.
pub struct Conv2dGrads {
    pub dinput: Tensor,
    pub dkernels: Tensor,
    pub dbias: Tensor,
}

pub struct PointwiseGrads {
    pub dinput: Tensor,
    pub dweights: Tensor,
    pub dbias: Tensor,
}

pub struct SeparableGrads {
    pub dinput: Tensor,
    pub ddw_kernels: Tensor,
    pub dpw_weights: Tensor,
    pub dpw_bias: Tensor,
}

fn out_extent(op: &'static str, name: &str, in_ext: usize, k: usize, stride: usize, pad: usize) -> Result<usize, OpError> {
    let padded = in_ext + 2 * pad;
    if k > padded {
        return Err(OpError::shape(
            op,
            format!("kernel {name} extent {k} exceeds padded input extent {padded}"),
        ));
    }
    let span = padded - k;
    if !span.is_multiple_of(stride) {
        return Err(OpError::shape(
            op,
            format!(
                "{name} extent {in_ext} with pad {pad}, kernel {k}, stride {stride} does not divide exactly"
            ),
        ));
    }
    Ok(span / stride + 1)
}

fn check4(op: &'static str, t: &Tensor, what: &str) -> Result<(), OpError> {
    if t.rank() != 4 {
        return Err(OpError::shape(
            op,
            format!("{what} must be rank 4, got rank {}", t.rank()),
        ));
    }
    Ok(())
}

/// Cross-correlation of a batch with a kernel bank.
///
/// `input` is N x Cin x H x W, `kernels` is Cout x Cin x kh x kw, `bias` is
/// Cout. Output is N x Cout x H' x W'.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor, OpError> {
    const OP: &str = "conv2d";
    check4(OP, input, "input")?;
    check4(OP, kernels, "kernels")?;
    if stride == 0 {
        return Err(OpError::arg(OP, "stride must be positive"));
    }
    let (n, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, kcin, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if kcin != cin {
        return Err(OpError::shape(
            OP,
            format!("kernel input-channel extent {kcin} != input channel extent {cin}"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(OpError::shape(
            OP,
            format!("bias extent {:?} != output channel extent [{cout}]", bias.shape()),
        ));
    }
    let oh = out_extent(OP, "height", h, kh, stride, pad)?;
    let ow = out_extent(OP, "width", w, kw, stride, pad)?;

    let mut out = Tensor::zeros(vec![n, cout, oh, ow]);
    let xd = input.data();
    let kd = kernels.data();
    let bd = bias.data();
    let od = out.data_mut();
    let ipad = pad as isize;

    for ni in 0..n {
        for co in 0..cout {
            let obase = ((ni * cout + co) * oh) * ow;
            for v in od[obase..obase + oh * ow].iter_mut() {
                *v = bd[co];
            }
            for ci in 0..cin {
                let xbase = ((ni * cin + ci) * h) * w;
                let kbase = ((co * cin + ci) * kh) * kw;
                for khi in 0..kh {
                    for kwi in 0..kw {
                        let kval = kd[kbase + khi * kw + kwi];
                        if kval == 0.0 {
                            continue;
                        }
                        for ohi in 0..oh {
                            let ih = (ohi * stride) as isize - ipad + khi as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = xbase + ih as usize * w;
                            let orow = obase + ohi * ow;
                            for owi in 0..ow {
                                let iw = (owi * stride) as isize - ipad + kwi as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                od[orow + owi] += kval * xd[xrow + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

/// Gradients of [`conv2d`] given the upstream gradient `dout`.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    pad: usize,
    dout: &Tensor,
) -> Result<Conv2dGrads, OpError> {
    const OP: &str = "conv2d_backward";
    check4(OP, input, "input")?;
    check4(OP, kernels, "kernels")?;
    check4(OP, dout, "dout")?;
    let (n, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, _, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if kernels.shape()[1] != cin {
        return Err(OpError::shape(
            OP,
            format!("kernel input-channel extent {} != input channel extent {cin}", kernels.shape()[1]),
        ));
    }
    let oh = out_extent(OP, "height", h, kh, stride, pad)?;
    let ow = out_extent(OP, "width", w, kw, stride, pad)?;
    if dout.shape() != [n, cout, oh, ow] {
        return Err(OpError::shape(
            OP,
            format!(
                "dout shape {:?} != expected [{n}, {cout}, {oh}, {ow}]",
                dout.shape()
            ),
        ));
    }

    let mut dinput = Tensor::zeros(vec![n, cin, h, w]);
    let mut dkernels = Tensor::zeros(vec![cout, cin, kh, kw]);
    let mut dbias = Tensor::zeros(vec![cout]);
    let xd = input.data();
    let kd = kernels.data();
    let gd = dout.data();
    let dxd = dinput.data_mut();
    let dkd = dkernels.data_mut();
    let dbd = dbias.data_mut();
    let ipad = pad as isize;

    for ni in 0..n {
        for co in 0..cout {
            let obase = ((ni * cout + co) * oh) * ow;
            for ohi in 0..oh {
                for owi in 0..ow {
                    let g = gd[obase + ohi * ow + owi];
                    if g == 0.0 {
                        continue;
                    }
                    dbd[co] += g;
                    for ci in 0..cin {
                        let xbase = ((ni * cin + ci) * h) * w;
                        let kbase = ((co * cin + ci) * kh) * kw;
                        for khi in 0..kh {
                            let ih = (ohi * stride) as isize - ipad + khi as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = xbase + ih as usize * w;
                            for kwi in 0..kw {
                                let iw = (owi * stride) as isize - ipad + kwi as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                dkd[kbase + khi * kw + kwi] += g * xd[xrow + iw as usize];
                                dxd[xrow + iw as usize] += g * kd[kbase + khi * kw + kwi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads {
        dinput,
        dkernels,
        dbias,
    })
}

/// Per-channel spatial convolution: channel c of the output depends only on
/// channel c of the input. `kernels` is C x kh x kw, no bias.
pub fn depthwise_conv(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor, OpError> {
    const OP: &str = "depthwise_conv";
    check4(OP, input, "input")?;
    if kernels.rank() != 3 {
        return Err(OpError::shape(
            OP,
            format!("kernels must be rank 3 (C x kh x kw), got rank {}", kernels.rank()),
        ));
    }
    if stride == 0 {
        return Err(OpError::arg(OP, "stride must be positive"));
    }
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (kc, kh, kw) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if kc != c {
        return Err(OpError::shape(
            OP,
            format!("kernel channel extent {kc} != input channel extent {c}"),
        ));
    }
    let oh = out_extent(OP, "height", h, kh, stride, pad)?;
    let ow = out_extent(OP, "width", w, kw, stride, pad)?;

    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let xd = input.data();
    let kd = kernels.data();
    let od = out.data_mut();
    let ipad = pad as isize;

    for ni in 0..n {
        for ci in 0..c {
            let xbase = ((ni * c + ci) * h) * w;
            let obase = ((ni * c + ci) * oh) * ow;
            let kbase = (ci * kh) * kw;
            for khi in 0..kh {
                for kwi in 0..kw {
                    let kval = kd[kbase + khi * kw + kwi];
                    if kval == 0.0 {
                        continue;
                    }
                    for ohi in 0..oh {
                        let ih = (ohi * stride) as isize - ipad + khi as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let xrow = xbase + ih as usize * w;
                        let orow = obase + ohi * ow;
                        for owi in 0..ow {
                            let iw = (owi * stride) as isize - ipad + kwi as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            od[orow + owi] += kval * xd[xrow + iw as usize];
                        }
                    }
                }
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

/// Gradients of [`depthwise_conv`]. Returns (dinput, dkernels).
pub fn depthwise_conv_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    pad: usize,
    dout: &Tensor,
) -> Result<(Tensor, Tensor), OpError> {
    const OP: &str = "depthwise_conv_backward";
    check4(OP, input, "input")?;
    check4(OP, dout, "dout")?;
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (kc, kh, kw) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if kc != c {
        return Err(OpError::shape(
            OP,
            format!("kernel channel extent {kc} != input channel extent {c}"),
        ));
    }
    let oh = out_extent(OP, "height", h, kh, stride, pad)?;
    let ow = out_extent(OP, "width", w, kw, stride, pad)?;
    if dout.shape() != [n, c, oh, ow] {
        return Err(OpError::shape(
            OP,
            format!("dout shape {:?} != expected [{n}, {c}, {oh}, {ow}]", dout.shape()),
        ));
    }

    let mut dinput = Tensor::zeros(vec![n, c, h, w]);
    let mut dkernels = Tensor::zeros(vec![c, kh, kw]);
    let xd = input.data();
    let kd = kernels.data();
    let gd = dout.data();
    let dxd = dinput.data_mut();
    let dkd = dkernels.data_mut();
    let ipad = pad as isize;

    for ni in 0..n {
        for ci in 0..c {
            let xbase = ((ni * c + ci) * h) * w;
            let obase = ((ni * c + ci) * oh) * ow;
            let kbase = (ci * kh) * kw;
            for ohi in 0..oh {
                for owi in 0..ow {
                    let g = gd[obase + ohi * ow + owi];
                    if g == 0.0 {
                        continue;
                    }
                    for khi in 0..kh {
                        let ih = (ohi * stride) as isize - ipad + khi as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let xrow = xbase + ih as usize * w;
                        for kwi in 0..kw {
                            let iw = (owi * stride) as isize - ipad + kwi as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            dkd[kbase + khi * kw + kwi] += g * xd[xrow + iw as usize];
                            dxd[xrow + iw as usize] += g * kd[kbase + khi * kw + kwi];
                        }
                    }
                }
            }
        }
    }
    Ok((dinput, dkernels))
}

/// 1x1 cross-channel mixing: a per-pixel linear map. `weights` is Cout x C,
/// `bias` is Cout. Spatial extents are unchanged.
pub fn pointwise_conv(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, OpError> {
    const OP: &str = "pointwise_conv";
    check4(OP, input, "input")?;
    if weights.rank() != 2 {
        return Err(OpError::shape(
            OP,
            format!("weights must be rank 2 (Cout x C), got rank {}", weights.rank()),
        ));
    }
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, wc) = (weights.shape()[0], weights.shape()[1]);
    if wc != c {
        return Err(OpError::shape(
            OP,
            format!("weights input-channel extent {wc} != input channel extent {c}"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(OpError::shape(
            OP,
            format!("bias extent {:?} != output channel extent [{cout}]", bias.shape()),
        ));
    }

    let hw = h * w;
    let mut out = Tensor::zeros(vec![n, cout, h, w]);
    let xd = input.data();
    let wd = weights.data();
    let bd = bias.data();
    let od = out.data_mut();

    for ni in 0..n {
        for co in 0..cout {
            let obase = (ni * cout + co) * hw;
            for v in od[obase..obase + hw].iter_mut() {
                *v = bd[co];
            }
            for ci in 0..c {
                let wv = wd[co * c + ci];
                if wv == 0.0 {
                    continue;
                }
                let xbase = (ni * c + ci) * hw;
                for p in 0..hw {
                    od[obase + p] += wv * xd[xbase + p];
                }
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

/// Gradients of [`pointwise_conv`].
pub fn pointwise_conv_backward(
    input: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
) -> Result<PointwiseGrads, OpError> {
    const OP: &str = "pointwise_conv_backward";
    check4(OP, input, "input")?;
    check4(OP, dout, "dout")?;
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, wc) = (weights.shape()[0], weights.shape()[1]);
    if wc != c {
        return Err(OpError::shape(
            OP,
            format!("weights input-channel extent {wc} != input channel extent {c}"),
        ));
    }
    if dout.shape() != [n, cout, h, w] {
        return Err(OpError::shape(
            OP,
            format!("dout shape {:?} != expected [{n}, {cout}, {h}, {w}]", dout.shape()),
        ));
    }

    let hw = h * w;
    let mut dinput = Tensor::zeros(vec![n, c, h, w]);
    let mut dweights = Tensor::zeros(vec![cout, c]);
    let mut dbias = Tensor::zeros(vec![cout]);
    let xd = input.data();
    let wd = weights.data();
    let gd = dout.data();
    let dxd = dinput.data_mut();
    let dwd = dweights.data_mut();
    let dbd = dbias.data_mut();

    for ni in 0..n {
        for co in 0..cout {
            let obase = (ni * cout + co) * hw;
            let mut bsum = 0.0;
            for p in 0..hw {
                bsum += gd[obase + p];
            }
            dbd[co] += bsum;
            for ci in 0..c {
                let xbase = (ni * c + ci) * hw;
                let wv = wd[co * c + ci];
                let mut wsum = 0.0;
                for p in 0..hw {
                    let g = gd[obase + p];
                    wsum += g * xd[xbase + p];
                    dxd[xbase + p] += g * wv;
                }
                dwd[co * c + ci] += wsum;
            }
        }
    }
    Ok(PointwiseGrads {
        dinput,
        dweights,
        dbias,
    })
}

/// Depthwise-separable convolution: exactly
/// `pointwise_conv(depthwise_conv(input, dw_kernels), pw_weights, pw_bias)`.
pub fn separable_conv(
    input: &Tensor,
    dw_kernels: &Tensor,
    pw_weights: &Tensor,
    pw_bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor, OpError> {
    let mid = depthwise_conv(input, dw_kernels, stride, pad)?;
    pointwise_conv(&mid, pw_weights, pw_bias)
}

/// Gradients of [`separable_conv`]. Recomputes the depthwise intermediate;
/// callers that cached it should use the two constituent backward ops instead.
pub fn separable_conv_backward(
    input: &Tensor,
    dw_kernels: &Tensor,
    pw_weights: &Tensor,
    stride: usize,
    pad: usize,
    dout: &Tensor,
) -> Result<SeparableGrads, OpError> {
    let mid = depthwise_conv(input, dw_kernels, stride, pad)?;
    let pw = pointwise_conv_backward(&mid, pw_weights, dout)?;
    let (dinput, ddw_kernels) =
        depthwise_conv_backward(input, dw_kernels, stride, pad, &pw.dinput)?;
    Ok(SeparableGrads {
        dinput,
        ddw_kernels,
        dpw_weights: pw.dweights,
        dpw_bias: pw.dbias,
    })
}

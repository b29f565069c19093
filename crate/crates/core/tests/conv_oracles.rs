//! Randomized agreement checks between the convolution implementations and
//! independent nested-loop references written directly from the definitions.

use polyth_core::ops::{conv2d, depthwise_conv, pointwise_conv};
use polyth_core::rng::Rng;
use polyth_core::tensor::Tensor;

fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, || rng.uniform(-1.0, 1.0))
}

/// Plain six-nested-loop cross-correlation with zero padding.
fn conv2d_reference(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, cin, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (cout, _, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(vec![n, cout, oh, ow]);
    for ni in 0..n {
        for co in 0..cout {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input.data()
                                    [input.idx4(ni, ci, iy as usize, ix as usize)]
                                    * kernels.data()[kernels.idx4(co, ci, ky, kx)];
                            }
                        }
                    }
                    let idx = out.idx4(ni, co, y, x);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

fn depthwise_reference(input: &Tensor, kernels: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (kh, kw) = (kernels.shape()[1], kernels.shape()[2]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += input.data()[input.idx4(ni, ci, iy as usize, ix as usize)]
                                * kernels.data()[kernels.idx3(ci, ky, kx)];
                        }
                    }
                    let idx = out.idx4(ni, ci, y, x);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

fn pointwise_reference(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Tensor {
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let cout = weights.shape()[0];
    let mut out = Tensor::zeros(vec![n, cout, h, w]);
    for ni in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.data()[co];
                    for ci in 0..c {
                        acc += input.data()[input.idx4(ni, ci, y, x)]
                            * weights.data()[weights.idx2(co, ci)];
                    }
                    let idx = out.idx4(ni, co, y, x);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Draw a shape/stride/pad combination that divides exactly.
fn draw_case(rng: &mut Rng) -> (usize, usize, usize, usize, usize, usize, usize) {
    loop {
        let n = 1 + rng.below(2);
        let cin = 1 + rng.below(4);
        let cout = 1 + rng.below(4);
        let h = 2 + rng.below(7); // up to 8
        let w = 2 + rng.below(7);
        let k = [1, 2, 3][rng.below(3)];
        let stride = 1 + rng.below(2);
        let pad = rng.below(2);
        if k > h + 2 * pad || k > w + 2 * pad {
            continue;
        }
        if !(h + 2 * pad - k).is_multiple_of(stride) || !(w + 2 * pad - k).is_multiple_of(stride) {
            continue;
        }
        return (n, cin, cout, h, w, k, stride * 10 + pad);
    }
}

#[test]
fn conv2d_agrees_with_reference_over_100_draws() {
    let mut rng = Rng::new(7001);
    for _ in 0..100 {
        let (n, cin, cout, h, w, k, sp) = draw_case(&mut rng);
        let (stride, pad) = (sp / 10, sp % 10);
        let input = random_tensor(vec![n, cin, h, w], &mut rng);
        let kernels = random_tensor(vec![cout, cin, k, k], &mut rng);
        let bias = random_tensor(vec![cout], &mut rng);
        let got = conv2d(&input, &kernels, &bias, stride, pad).unwrap();
        let want = conv2d_reference(&input, &kernels, &bias, stride, pad);
        assert!(
            max_abs_diff(&got, &want) < 1e-10,
            "n={n} cin={cin} cout={cout} h={h} w={w} k={k} stride={stride} pad={pad}"
        );
    }
}

#[test]
fn depthwise_agrees_with_reference_over_100_draws() {
    let mut rng = Rng::new(7002);
    for _ in 0..100 {
        let (n, c, _, h, w, k, sp) = draw_case(&mut rng);
        let (stride, pad) = (sp / 10, sp % 10);
        let input = random_tensor(vec![n, c, h, w], &mut rng);
        let kernels = random_tensor(vec![c, k, k], &mut rng);
        let got = depthwise_conv(&input, &kernels, stride, pad).unwrap();
        let want = depthwise_reference(&input, &kernels, stride, pad);
        assert!(
            max_abs_diff(&got, &want) < 1e-10,
            "n={n} c={c} h={h} w={w} k={k} stride={stride} pad={pad}"
        );
    }
}

#[test]
fn pointwise_agrees_with_reference_over_100_draws() {
    let mut rng = Rng::new(7003);
    for _ in 0..100 {
        let n = 1 + rng.below(2);
        let c = 1 + rng.below(4);
        let cout = 1 + rng.below(4);
        let h = 1 + rng.below(8);
        let w = 1 + rng.below(8);
        let input = random_tensor(vec![n, c, h, w], &mut rng);
        let weights = random_tensor(vec![cout, c], &mut rng);
        let bias = random_tensor(vec![cout], &mut rng);
        let got = pointwise_conv(&input, &weights, &bias).unwrap();
        let want = pointwise_reference(&input, &weights, &bias);
        assert!(max_abs_diff(&got, &want) < 1e-10, "n={n} c={c} cout={cout} h={h} w={w}");
    }
}

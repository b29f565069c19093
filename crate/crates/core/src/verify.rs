//! Runnable self-checks: every layer's backward pass against central finite
//! differences, the fused weighted softmax loss gradient, the whole network
//! end to end, an independent scalar-loop Adam reference, and the loss
//! decomposition identities. The CLI's verify command prints one line per
//! check and fails if any check fails.
//!
//! `perturb` names a check whose analytic gradient gets deliberately
//! corrupted before comparison; it exists so the harness itself can be
//! tested (a poisoned backward must be caught and named).

use crate::loss::{
    cce_loss, one_hot, softmax_loss_grad, weighted_cce_loss, LossWeighting, PROB_CLAMP,
};
use crate::model::{backward, forward, init_params, ModelConfig, ParamStore};
use crate::ops::{
    conv2d, conv2d_backward, dense, dense_backward, depthwise_conv, depthwise_conv_backward,
    global_avg_pool, global_avg_pool_backward, grad_check, maxpool2, maxpool2_backward,
    pointwise_conv, pointwise_conv_backward, relu, relu_backward, scalar_probe, separable_conv,
    separable_conv_backward, softmax, weighted_sum,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{adam_step, AdamState, TrainConfig};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Names accepted by the `perturb` hook, in run order.
pub fn check_names() -> &'static [&'static str] {
    &[
        "dense",
        "conv2d",
        "depthwise_conv",
        "pointwise_conv",
        "separable_conv",
        "relu",
        "maxpool2",
        "global_avg_pool",
        "softmax_weighted_loss",
        "model",
        "adam_oracle",
        "loss_lambda1_bitwise",
        "loss_decomposition",
        "loss_hand_value",
    ]
}

const LINEAR_TOL: f64 = 1e-6;
const COMPOSITE_TOL: f64 = 1e-4;

fn poison(grads: &mut [Tensor], name: &'static str, perturb: Option<&str>) {
    if perturb == Some(name) {
        if let Some(first) = grads.first_mut() {
            if let Some(v) = first.data_mut().first_mut() {
                *v += 0.5;
            }
        }
    }
}

fn grad_result(
    name: &'static str,
    tol: f64,
    inputs: &[Tensor],
    mut analytic: Vec<Tensor>,
    names: &[&str],
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    perturb: Option<&str>,
) -> CheckResult {
    poison(&mut analytic, name, perturb);
    let report = grad_check(inputs, &analytic, names, f);
    CheckResult {
        name,
        passed: report.max_rel_err < tol,
        detail: format!(
            "max rel err {:.3e} (tol {:.0e}) at {}",
            report.max_rel_err, tol, report.worst
        ),
    }
}

fn check_dense(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(1001);
    let input = Tensor::from_fn(vec![2, 3], || rng.uniform(-1.0, 1.0));
    let weights = Tensor::from_fn(vec![3, 2], || rng.uniform(-1.0, 1.0));
    let bias = Tensor::from_fn(vec![2], || rng.uniform(-1.0, 1.0));
    let probe = scalar_probe(&[2, 2], &mut rng);
    let g = dense_backward(&input, &weights, &probe).expect("shapes fixed");
    grad_result(
        "dense",
        LINEAR_TOL,
        &[input.clone(), weights.clone(), bias.clone()],
        vec![g.dinput, g.dweights, g.dbias],
        &["input", "weights", "bias"],
        &mut |xs| weighted_sum(&dense(&xs[0], &xs[1], &xs[2]).unwrap(), &probe),
        perturb,
    )
}

fn check_conv2d(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(1002);
    let input = Tensor::from_fn(vec![2, 2, 4, 4], || rng.uniform(-1.0, 1.0));
    let kernels = Tensor::from_fn(vec![3, 2, 3, 3], || rng.uniform(-1.0, 1.0));
    let bias = Tensor::from_fn(vec![3], || rng.uniform(-1.0, 1.0));
    let probe = scalar_probe(&[2, 3, 4, 4], &mut rng);
    let g = conv2d_backward(&input, &kernels, 1, 1, &probe).expect("shapes fixed");
    grad_result(
        "conv2d",
        LINEAR_TOL,
        &[input.clone(), kernels.clone(), bias.clone()],
        vec![g.dinput, g.dkernels, g.dbias],
        &["input", "kernels", "bias"],
        &mut |xs| weighted_sum(&conv2d(&xs[0], &xs[1], &xs[2], 1, 1).unwrap(), &probe),
        perturb,
    )
}

fn check_depthwise(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(1003);
    let input = Tensor::from_fn(vec![2, 3, 4, 4], || rng.uniform(-1.0, 1.0));
    let kernels = Tensor::from_fn(vec![3, 3, 3], || rng.uniform(-1.0, 1.0));
    let probe = scalar_probe(&[2, 3, 4, 4], &mut rng);
    let (dinput, dkernels) =
        depthwise_conv_backward(&input, &kernels, 1, 1, &probe).expect("shapes fixed");
    grad_result(
        "depthwise_conv",
        LINEAR_TOL,
        &[input.clone(), kernels.clone()],
        vec![dinput, dkernels],
        &["input", "kernels"],
        &mut |xs| weighted_sum(&depthwise_conv(&xs[0], &xs[1], 1, 1).unwrap(), &probe),
        perturb,
    )
}

fn check_pointwise(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(1004);
    let input = Tensor::from_fn(vec![2, 3, 3, 3], || rng.uniform(-1.0, 1.0));
    let weights = Tensor::from_fn(vec![4, 3], || rng.uniform(-1.0, 1.0));
    let bias = Tensor::from_fn(vec![4], || rng.uniform(-1.0, 1.0));
    let probe = scalar_probe(&[2, 4, 3, 3], &mut rng);
    let g = pointwise_conv_backward(&input, &weights, &probe).expect("shapes fixed");
    grad_result(
        "pointwise_conv",
        LINEAR_TOL,
        &[input.clone(), weights.clone(), bias.clone()],
        vec![g.dinput, g.dweights, g.dbias],
        &["input", "weights", "bias"],
        &mut |xs| weighted_sum(&pointwise_conv(&xs[0], &xs[1], &xs[2]).unwrap(), &probe),
        perturb,
    )
}

fn check_separable(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(1005);
    let input = Tensor::from_fn(vec![2, 3, 4, 4], || rng.uniform(-1.0, 1.0));
    let dw = Tensor::from_fn(vec![3, 3, 3], || rng.uniform(-1.0, 1.0));
    let pw = Tensor::from_fn(vec![5, 3], || rng.uniform(-1.0, 1.0));
    let bias = Tensor::from_fn(vec![5], || rng.uniform(-1.0, 1.0));
    let probe = scalar_probe(&[2, 5, 4, 4], &mut rng);
    let g = separable_conv_backward(&input, &dw, &pw, 1, 1, &probe).expect("shapes fixed");
    grad_result(
        "separable_conv",
        COMPOSITE_TOL,
        &[input.clone(), dw.clone(), pw.clone(), bias.clone()],
        vec![g.dinput, g.ddw_kernels, g.dpw_weights, g.dpw_bias],
        &["input", "dw_kernels", "pw_weights", "pw_bias"],
        &mut |xs| {
            weighted_sum(
                &separable_conv(&xs[0], &xs[1], &xs[2], &xs[3], 1, 1).unwrap(),
                &probe,
            )
        },
        perturb,
    )
}

fn check_relu(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(1006);
    // keep inputs off the kink
    let input = Tensor::from_fn(vec![4, 4], || {
        let x = rng.uniform(-1.0, 1.0);
        if x.abs() < 1e-3 {
            x + 5e-3
        } else {
            x
        }
    });
    let probe = scalar_probe(&[4, 4], &mut rng);
    let din = relu_backward(&input, &probe).expect("shapes fixed");
    grad_result(
        "relu",
        LINEAR_TOL,
        std::slice::from_ref(&input),
        vec![din],
        &["input"],
        &mut |xs| weighted_sum(&relu(&xs[0]), &probe),
        perturb,
    )
}

fn check_maxpool(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(1007);
    let input = Tensor::from_fn(vec![1, 2, 4, 4], || rng.uniform(-1.0, 1.0));
    let probe = scalar_probe(&[1, 2, 2, 2], &mut rng);
    let din = maxpool2_backward(&input, &probe).expect("shapes fixed");
    grad_result(
        "maxpool2",
        LINEAR_TOL,
        std::slice::from_ref(&input),
        vec![din],
        &["input"],
        &mut |xs| weighted_sum(&maxpool2(&xs[0]).unwrap(), &probe),
        perturb,
    )
}

fn check_gap(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(1008);
    let input = Tensor::from_fn(vec![2, 3, 4, 4], || rng.uniform(-1.0, 1.0));
    let probe = scalar_probe(&[2, 3], &mut rng);
    let din = global_avg_pool_backward(input.shape(), &probe).expect("shapes fixed");
    grad_result(
        "global_avg_pool",
        LINEAR_TOL,
        std::slice::from_ref(&input),
        vec![din],
        &["input"],
        &mut |xs| weighted_sum(&global_avg_pool(&xs[0]).unwrap(), &probe),
        perturb,
    )
}

fn check_fused_loss(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(1009);
    let labels = vec![0, 2, 1, 2];
    let y = one_hot(&labels, 3).expect("labels valid");
    let logits = Tensor::from_fn(vec![4, 3], || rng.uniform(-2.0, 2.0));
    let w = LossWeighting::new(1.25).expect("lambda valid");
    let (_, dlogits) = softmax_loss_grad(&y, &logits, &w).expect("shapes fixed");
    grad_result(
        "softmax_weighted_loss",
        LINEAR_TOL,
        std::slice::from_ref(&logits),
        vec![dlogits],
        &["logits"],
        &mut |xs| {
            let p = softmax(&xs[0]).unwrap();
            weighted_cce_loss(&y, &p, &w).unwrap()
        },
        perturb,
    )
}

fn check_model(perturb: Option<&str>) -> CheckResult {
    let cfg = ModelConfig {
        input_size: (16, 16),
        num_classes: 3,
        stem_channels: 4,
        block_channels: vec![6],
        use_residual: true,
        head_widths: (8, 8),
        drop_prob: 0.0,
    };
    let mut params = init_params(&cfg, 4242).expect("config valid");
    let mut rng = Rng::new(1010);
    let batch = Tensor::from_fn(vec![2, 3, 16, 16], || rng.uniform(-1.0, 1.0));
    let y = one_hot(&[0, 2], 3).expect("labels valid");
    let w = LossWeighting::new(1.25).expect("lambda valid");

    let (logits, cache) = forward(&params, &cfg, &batch, false, &mut Rng::new(0)).expect("forward");
    let (_, dlogits) = softmax_loss_grad(&y, &logits, &w).expect("loss");
    params.zero_grads();
    backward(&mut params, &cfg, &cache, &dlogits).expect("backward");

    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let values: Vec<Tensor> = params.iter().map(|(_, p)| p.value.clone()).collect();
    let grads: Vec<Tensor> = params.iter().map(|(_, p)| p.grad.clone()).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();

    grad_result(
        "model",
        COMPOSITE_TOL,
        &values,
        grads,
        &name_refs,
        &mut |values| {
            let mut p = ParamStore::new();
            for (name, v) in names.iter().zip(values) {
                p.insert(name, v.clone());
            }
            let (logits, _) = forward(&p, &cfg, &batch, false, &mut Rng::new(0)).unwrap();
            let probs = softmax(&logits).unwrap();
            weighted_cce_loss(&y, &probs, &w).unwrap()
        },
        perturb,
    )
}

fn check_adam_oracle(perturb: Option<&str>) -> CheckResult {
    let cfg = TrainConfig::default();
    let n = 5;
    let mut rng = Rng::new(2024);
    let init: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();

    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(vec![n], init.clone()).expect("length matches"));
    let mut state = AdamState::new(&store);

    let mut theta = init;
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];

    let mut grad_rng = Rng::new(515);
    for t in 1..=100u32 {
        let grads: Vec<f64> = (0..n).map(|_| grad_rng.uniform(-2.0, 2.0)).collect();
        store
            .get_mut("w")
            .expect("exists")
            .grad
            .data_mut()
            .copy_from_slice(&grads);
        adam_step(&mut store, &mut state, 0.001, &cfg).expect("shapes fixed");
        for j in 0..n {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grads[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grads[j] * grads[j];
            let m_hat = m[j] / (1.0 - cfg.beta1.powi(t as i32));
            let v_hat = v[j] / (1.0 - cfg.beta2.powi(t as i32));
            theta[j] -= 0.001 * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    let mut worst = 0.0f64;
    for (a, b) in store.get("w").expect("exists").value.data().iter().zip(&theta) {
        worst = worst.max((a - b).abs());
    }
    if perturb == Some("adam_oracle") {
        worst += 1.0;
    }
    CheckResult {
        name: "adam_oracle",
        passed: worst < 1e-12,
        detail: format!("max abs deviation {worst:.3e} over 100 steps (tol 1e-12)"),
    }
}

fn random_prob_batch(m: usize, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(vec![m, 3]);
    for j in 0..m {
        let mut row = [0.0; 3];
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = rng.uniform(0.05, 1.0);
            sum += *v;
        }
        for (i, v) in row.iter().enumerate() {
            t.data_mut()[j * 3 + i] = v / sum;
        }
    }
    t
}

fn check_lambda1_bitwise(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(3030);
    let w = LossWeighting::new(1.0).expect("lambda valid");
    let mut passed = true;
    for _ in 0..200 {
        let labels: Vec<usize> = (0..8).map(|_| rng.below(3)).collect();
        let y = one_hot(&labels, 3).expect("labels valid");
        let yhat = random_prob_batch(8, &mut rng);
        let a = weighted_cce_loss(&y, &yhat, &w).expect("shapes fixed");
        let b = cce_loss(&y, &yhat).expect("shapes fixed");
        if a.to_bits() != b.to_bits() {
            passed = false;
            break;
        }
    }
    if perturb == Some("loss_lambda1_bitwise") {
        passed = false;
    }
    CheckResult {
        name: "loss_lambda1_bitwise",
        passed,
        detail: "weighted loss with lambda 1 equals plain loss bitwise on 200 batches".into(),
    }
}

fn check_decomposition(perturb: Option<&str>) -> CheckResult {
    let mut rng = Rng::new(4040);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let lambda = rng.uniform(0.2, 4.0);
        let w = LossWeighting::new(lambda).expect("lambda valid");
        let labels: Vec<usize> = (0..6).map(|_| rng.below(3)).collect();
        let y = one_hot(&labels, 3).expect("labels valid");
        let yhat = random_prob_batch(6, &mut rng);
        let weighted = weighted_cce_loss(&y, &yhat, &w).expect("shapes fixed");
        let plain = cce_loss(&y, &yhat).expect("shapes fixed");
        let mut poly = 0.0;
        for (j, &label) in labels.iter().enumerate() {
            if label == 2 {
                poly -= yhat.data()[j * 3 + 2].clamp(PROB_CLAMP, 1.0).ln();
            }
        }
        worst = worst.max((weighted - (plain + (lambda - 1.0) * poly)).abs());
    }
    if perturb == Some("loss_decomposition") {
        worst += 1.0;
    }
    CheckResult {
        name: "loss_decomposition",
        passed: worst < 1e-12,
        detail: format!("max abs residual {worst:.3e} over 1000 batches (tol 1e-12)"),
    }
}

fn check_hand_value(perturb: Option<&str>) -> CheckResult {
    let y = one_hot(&[2], 3).expect("label valid");
    let yhat = Tensor::new(vec![1, 3], vec![0.2, 0.2, 0.6]).expect("length matches");
    let w = LossWeighting::new(1.25).expect("lambda valid");
    let mut loss = weighted_cce_loss(&y, &yhat, &w).expect("shapes fixed");
    if perturb == Some("loss_hand_value") {
        loss += 1.0;
    }
    let want = 0.6385320;
    CheckResult {
        name: "loss_hand_value",
        passed: (loss - want).abs() < 1e-6,
        detail: format!("weighted loss {loss:.7} vs expected {want} (tol 1e-6)"),
    }
}

/// Run every check. `perturb` deliberately corrupts the named check.
pub fn run_verification(perturb: Option<&str>) -> VerifyReport {
    let checks = vec![
        check_dense(perturb),
        check_conv2d(perturb),
        check_depthwise(perturb),
        check_pointwise(perturb),
        check_separable(perturb),
        check_relu(perturb),
        check_maxpool(perturb),
        check_gap(perturb),
        check_fused_loss(perturb),
        check_model(perturb),
        check_adam_oracle(perturb),
        check_lambda1_bitwise(perturb),
        check_decomposition(perturb),
        check_hand_value(perturb),
    ];
    VerifyReport { checks }
}

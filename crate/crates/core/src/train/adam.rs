//! Adam with bias correction.

use super::{TrainConfig, TrainError};
use crate::model::ParamStore;
use crate::tensor::Tensor;

/// Per-parameter first and second moments plus the shared step counter.
/// Moment tensors mirror the parameter store's order and shapes and start
/// at zero.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> AdamState {
        let m = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over every parameter, in store order:
/// t += 1; m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2;
/// theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
pub fn adam_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if state.m.len() != params.len() {
        return Err(TrainError::InvalidConfig {
            message: format!(
                "optimizer state tracks {} tensors, store has {}",
                state.m.len(),
                params.len()
            ),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (i, (name, p)) in params.iter_mut().enumerate() {
        if state.m[i].shape() != p.value.shape() {
            return Err(TrainError::InvalidConfig {
                message: format!(
                    "optimizer state shape {:?} != parameter {name} shape {:?}",
                    state.m[i].shape(),
                    p.value.shape()
                ),
            });
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.grad.data();
        let theta = p.value.data_mut();
        for j in 0..g.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

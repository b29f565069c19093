//! Inverted dropout.

use super::OpError;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which elements survived a training-mode dropout pass. Needed by the
/// backward pass; `None` means the pass was an inference-mode identity.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    keep: Vec<bool>,
    inv_keep_prob: f64,
}

/// Dropout with inverted scaling: in training mode each element is zeroed
/// independently with probability `drop_prob` and survivors are scaled by
/// 1/(1 - drop_prob). In inference mode the input passes through bitwise.
pub fn dropout_forward(
    input: &Tensor,
    drop_prob: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<(Tensor, Option<DropoutMask>), OpError> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(OpError::arg(
            "dropout",
            format!("drop_prob must be in [0, 1), got {drop_prob}"),
        ));
    }
    if !training {
        return Ok((input.clone(), None));
    }
    let inv = 1.0 / (1.0 - drop_prob);
    let mut keep = Vec::with_capacity(input.len());
    let data = input
        .data()
        .iter()
        .map(|&x| {
            let keep_this = !rng.chance(drop_prob);
            keep.push(keep_this);
            if keep_this {
                x * inv
            } else {
                0.0
            }
        })
        .collect();
    let out = Tensor::new(input.shape().to_vec(), data).expect("shape unchanged");
    Ok((
        out,
        Some(DropoutMask {
            keep,
            inv_keep_prob: inv,
        }),
    ))
}

/// Convenience wrapper that discards the mask.
pub fn dropout(
    input: &Tensor,
    drop_prob: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor, OpError> {
    dropout_forward(input, drop_prob, training, rng).map(|(t, _)| t)
}

/// Gradient through dropout: upstream gradient where the element survived
/// (scaled like the forward pass), zero where it was dropped. A `None` mask
/// is the inference identity.
pub fn dropout_backward(
    dout: &Tensor,
    mask: Option<&DropoutMask>,
) -> Result<Tensor, OpError> {
    match mask {
        None => Ok(dout.clone()),
        Some(m) => {
            if m.keep.len() != dout.len() {
                return Err(OpError::shape(
                    "dropout_backward",
                    format!(
                        "mask length {} != gradient length {}",
                        m.keep.len(),
                        dout.len()
                    ),
                ));
            }
            let data = dout
                .data()
                .iter()
                .zip(&m.keep)
                .map(|(&g, &k)| if k { g * m.inv_keep_prob } else { 0.0 })
                .collect();
            Ok(Tensor::new(dout.shape().to_vec(), data).expect("shape unchanged"))
        }
    }
}

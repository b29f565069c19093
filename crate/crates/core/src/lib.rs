//! Three-class polythene-bag classifier built from scratch: dense f64
//! tensors, depthwise-separable convolutions, a class-weighted categorical
//! cross-entropy, and a deterministic train/eval pipeline over PPM images.

// index loops keep the layer kernels close to their definitions
#![allow(clippy::needless_range_loop)]
// validations use negated comparisons on purpose: NaN must fail them
#![allow(clippy::neg_cmp_op_on_partial_ord)]
//!
//! Every backward pass is checked against central finite differences and the
//! heavier forward ops against independent nested-loop oracles; see the
//! `verify` module for the runnable self-check suite.

pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use rng::Rng;
pub use tensor::{ParamTensor, Tensor, TensorError};

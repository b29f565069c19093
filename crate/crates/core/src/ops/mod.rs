//! Forward and backward implementations of every layer primitive the model
//! needs. All arithmetic is f64; backward passes are validated against
//! central finite differences (see [`grad_check`]).

mod activation;
mod conv;
mod dense;
mod dropout;
mod gradcheck;
mod pool;

pub use activation::{relu, relu_backward, softmax};
pub use conv::{
    conv2d, conv2d_backward, depthwise_conv, depthwise_conv_backward, pointwise_conv,
    pointwise_conv_backward, separable_conv, separable_conv_backward, Conv2dGrads,
    PointwiseGrads, SeparableGrads,
};
pub use dense::{dense, dense_backward, DenseGrads};
pub use dropout::{dropout, dropout_backward, dropout_forward, DropoutMask};
pub use gradcheck::{
    grad_check, numeric_grad, scalar_probe, weighted_sum, GradCheckReport, FD_STEP,
};
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool2, maxpool2_backward};

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum OpError {
    /// Input shapes are incompatible; the message names the offending dimension.
    ShapeMismatch { op: &'static str, message: String },
    /// A scalar argument is out of its allowed range.
    InvalidArgument { op: &'static str, message: String },
}

impl OpError {
    pub(crate) fn shape(op: &'static str, message: impl Into<String>) -> OpError {
        OpError::ShapeMismatch {
            op,
            message: message.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, message: impl Into<String>) -> OpError {
        OpError::InvalidArgument {
            op,
            message: message.into(),
        }
    }
}

impl fmt::Display for OpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpError::ShapeMismatch { op, message } => write!(f, "{op}: {message}"),
            OpError::InvalidArgument { op, message } => write!(f, "{op}: {message}"),
        }
    }
}

impl std::error::Error for OpError {}

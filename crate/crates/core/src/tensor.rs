//! Dense row-major tensors of 64-bit floats.
//!
//! Image batches use batch x channel x height x width order. Every operation
//! in this crate produces finite values from finite inputs; constructors check
//! that data length matches the shape product.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Data length does not equal the product of the extents.
    DataLength { expected: usize, got: usize },
    /// Shape contains a zero extent.
    ZeroExtent { axis: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataLength { expected, got } => {
                write!(f, "data length mismatch: shape wants {expected}, got {got}")
            }
            TensorError::ZeroExtent { axis } => {
                write!(f, "zero extent at axis {axis}; all extents must be positive")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense multi-dimensional array of f64, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that `data.len()` equals the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, TensorError> {
        if let Some(axis) = shape.iter().position(|&e| e == 0) {
            return Err(TensorError::ZeroExtent { axis });
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    /// Fill from a generator in row-major order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut() -> f64) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: (0..len).map(|_| f()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret the extents without touching the data.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        if let Some(axis) = shape.iter().position(|&e| e == 0) {
            return Err(TensorError::ZeroExtent { axis });
        }
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::DataLength {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Accumulate `other` into self. Shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::DataLength {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, k: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x * k).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    // Flat index helpers for the layouts the layer code walks.

    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        i * self.shape[1] + j
    }

    #[inline]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    #[inline]
    pub fn idx4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }
}

/// A trainable value paired with its gradient accumulator.
///
/// The gradient always has the same shape as the value and is exactly zero
/// right after `zero_grad`.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub value: Tensor,
    pub grad: Tensor,
}

impl ParamTensor {
    pub fn new(value: Tensor) -> ParamTensor {
        let grad = Tensor::zeros(value.shape().to_vec());
        ParamTensor { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

//! Dense f64 tensors, a tape-based reverse-mode autodiff graph, and Adam.
//!
//! Feature maps use the `[1, C, H, W]` layout throughout; the batch
//! dimension is always 1 inside a graph and batching is realised by
//! accumulating gradients across samples.

mod adam;
mod graph;
pub mod kernels;
mod params;

pub use adam::{adam_step, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank {expected} tensor, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Rank-≤4 dense tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("rank must be 1..=4, got shape {shape:?}"),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("extents must be positive, got {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                dim: "element count",
                expected: n,
                got: values.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![v; n]).expect("valid shape")
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(&[1], vec![v]).expect("valid shape")
    }

    /// `[1, C, H, W]` feature map.
    pub fn map(c: usize, h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(&[1, c, h, w], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "set_grad",
                dim: "element count",
                expected: self.values.len(),
                got: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn item(&self) -> f64 {
        self.values[0]
    }

    /// `(C, H, W)` of a `[1, C, H, W]` map.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        chw(&self.shape, "chw")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn chw(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match shape {
        [1, c, h, w] => Ok((*c, *h, *w)),
        [b, _, _, _] => Err(TensorError::ShapeMismatch {
            op,
            dim: "batch",
            expected: 1,
            got: *b,
        }),
        _ => Err(TensorError::Rank {
            op,
            expected: 4,
            got: shape.to_vec(),
        }),
    }
}

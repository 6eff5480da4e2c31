//! Dense f64 tensors and a tape-based reverse-mode autodiff graph.

mod gradcheck;
mod graph;
pub(crate) mod kernels;

use std::fmt;

pub use gradcheck::{grad_check, grad_check_params, GradCheckFailure, GradCheckReport};
pub use graph::{BatchStats, BinaryOp, Gradients, Graph, UnaryOp, Var, BATCH_NORM_EPS};

use crate::error::{Error, Result};

/// Ordered extents of a tensor, rank 0 through 4.
///
/// Rank-4 tensors use batch × channels × height × width layout.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub const MAX_RANK: usize = 4;

    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() > Self::MAX_RANK {
            return Err(Error::InvalidShape(format!(
                "rank {} exceeds {}",
                dims.len(),
                Self::MAX_RANK
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("zero extent in {dims:?}")));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "×")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// A detached dense tensor: shape plus row-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Self::from_shape(shape, data)
    }

    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::InvalidShape(format!("{} values for shape {shape}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Tensor {
            shape,
            data: vec![value; n],
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        Tensor::new(dims, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor> {
        let dims = self.dims();
        if dims.is_empty() || start >= end || end > dims[0] {
            return Err(Error::InvalidShape(format!(
                "batch slice {start}..{end} of {}",
                self.shape
            )));
        }
        let row = self.numel() / dims[0];
        let mut out_dims = dims.to_vec();
        out_dims[0] = end - start;
        Tensor::new(&out_dims, self.data[start * row..end * row].to_vec())
    }

    /// Gathers rows along the leading axis.
    pub fn select_batch(&self, indices: &[usize]) -> Result<Tensor> {
        let dims = self.dims();
        if dims.is_empty() || indices.is_empty() {
            return Err(Error::InvalidShape(format!(
                "cannot gather {} rows of {}",
                indices.len(),
                self.shape
            )));
        }
        let row = self.numel() / dims[0];
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= dims[0] {
                return Err(Error::InvalidShape(format!("row {i} of {}", self.shape)));
            }
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut out_dims = dims.to_vec();
        out_dims[0] = indices.len();
        Tensor::new(&out_dims, data)
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

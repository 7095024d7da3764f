//! Dense `f64` tensors and a define-by-run reverse-mode autodiff tape.
//!
//! The primitive set is deliberately small: it covers exactly what the
//! multi-tower network, the label embedding unit and the fusion attention
//! need. A [`Tape`] is built fresh for every training step; parameters enter
//! it as leaves, and [`Tape::backward`] returns a [`Gradients`] buffer per
//! call so several losses can be differentiated from one forward trace.

pub mod gradcheck;
mod tape;

pub use tape::{Gradients, Tape, Var};
pub(crate) use tape::sigmoid;

use crate::error::{Error, Result};

/// Lower clamp applied to `log` inputs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                msg: format!(
                    "shape {shape:?} holds {numel} values but {} were given",
                    data.len()
                ),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a `[rows, cols]` matrix; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape {
                op: "from_rows",
                msg: "ragged rows".into(),
            });
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    /// A `[n, 1]` column.
    pub fn column(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// `(rows, cols)` when viewed as a matrix over the last axis.
    pub fn dims2(&self) -> (usize, usize) {
        dims2(&self.shape)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, c) = self.dims2();
        self.data[row * c + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [.., last] => (shape[..shape.len() - 1].iter().product(), *last),
    }
}

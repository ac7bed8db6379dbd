//! Dense `f32` tensors and the small differentiable operator set used by the
//! classifier and the inversion decoder.
//!
//! Forward passes are recorded on a [`Tape`]; calling [`Tape::backward`] (or
//! [`Tape::backward_seeded`] at a split boundary) walks the tape in reverse and
//! returns a [`Gradients`] table indexed by [`Var`].

mod gradcheck;
pub(crate) mod kernels;
mod optim;
mod tape;

pub use gradcheck::grad_check;
pub use optim::{Adam, Parameter};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Row-major n-dimensional array of 32-bit floats.
///
/// Every dimension is positive and `shape.iter().product() == data.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "tensor",
                msg: format!("shape {shape:?} must have at least one axis and no zero dimensions"),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                axis: "data",
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        assert!(len > 0, "tensor shape {shape:?} has a zero dimension");
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor by calling `f` once per element in row-major order.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f32) -> Self {
        let len: usize = shape.iter().product();
        assert!(len > 0, "tensor shape {shape:?} has a zero dimension");
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data)
    }

    /// Number of samples along the leading axis.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Elements per sample (product of the trailing axes).
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    /// Collapses all trailing axes: `[n, ...] -> [n, prod(...)]`.
    pub fn flatten_rows(&self) -> Tensor {
        Tensor {
            shape: vec![self.rows(), self.row_len()],
            data: self.data.clone(),
        }
    }

    /// Gathers samples along the leading axis.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        assert!(!indices.is_empty(), "select_rows with no indices");
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    /// Stacks tensors with identical trailing shape along the leading axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Shape {
            op: "concat_rows",
            msg: "no tensors to concatenate".into(),
        })?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for t in parts {
            if &t.shape[1..] != tail {
                return Err(Error::Shape {
                    op: "concat_rows",
                    msg: format!("trailing shape {:?} differs from {:?}", &t.shape[1..], tail),
                });
            }
            rows += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise sum; shapes must match.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape("add", other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape("sub", other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                msg: format!("shape {:?} does not match {:?}", self.shape, other.shape),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn select_and_concat_rows() {
        let t = Tensor::from_fn(&[3, 2], |i| i as f32);
        let s = t.select_rows(&[2, 0]);
        assert_eq!(s.data(), &[4.0, 5.0, 0.0, 1.0]);
        let c = Tensor::concat_rows(&[s.clone(), t.clone()]).unwrap();
        assert_eq!(c.shape(), &[5, 2]);
        assert_eq!(&c.data()[4..], t.data());
    }
}

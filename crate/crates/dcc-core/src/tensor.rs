//! Dense row-major tensors. The numeric substrate for the model and probes:
//! contiguous storage, no views or strides, deterministic kernels. Element
//! type is generic so gradient-check tests can run the same code in f64.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Element trait for all kernels: f32 for inference/training, f64 for
/// gradient checks.
pub trait Scalar: Float + NumAssign + Sum + Send + Sync + fmt::Debug + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: lhs={lhs:?}, rhs={rhs:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("target id {id} out of vocabulary range {vocab}")]
    TargetOutOfRange { id: usize, vocab: usize },
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::BadShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// 2-D constructor from nested rows; rows must be equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            if r.len() != n {
                return Err(TensorError::BadShape {
                    shape: vec![m, n],
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::from_vec(&[m, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Number of rows when viewed as a 2-D [rows × cols] tensor (the last
    /// axis is the column axis; leading axes are flattened).
    pub fn rows(&self) -> usize {
        match self.shape.split_last() {
            Some((_, lead)) => lead.iter().product::<usize>().max(usize::from(lead.is_empty())),
            None => 0,
        }
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.cols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.cols();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute element-wise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn to_f64_tensor(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| Scalar::to_f64(*x)).collect(),
        }
    }

    pub fn to_f32_tensor(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| Scalar::to_f64(*x) as f32)
                .collect(),
        }
    }
}

//! Dense row-major tensors and the layer math the detector needs.
//!
//! The layout is always "last dimension fastest". Feature maps are stored as
//! `[H, W, C]`, convolution kernels as `[kh, kw, c_in, c_out]` and dense
//! weights as `[n_in, n_out]`, which lets every layer lower to a single GEMM.

pub mod gradcheck;
mod init;
pub mod ops;
mod optim;
mod scalar;
mod tape;

pub use init::{glorot_uniform, init_rng, InitRng};
pub use ops::{ConvSpec, Padding, PoolSpec};
pub use optim::{rmsprop_step, RmsProp};
pub use scalar::Scalar;
pub use tape::{GradientTape, Gradients, Var};

use std::fmt;

/// Errors raised by tensor construction and layer evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch on {axis}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{op}: index {index} out of range for length {len}")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, axis: &'static str, expected: usize, found: usize) -> Self {
        TensorError::Shape { op, axis, expected, found }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Invalid { op, msg: msg.into() }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// A dense n-dimensional array stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        check_dims("Tensor::new", &dims)?;
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(TensorError::shape("Tensor::new", "data length", len, data.len()));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Self {
        let dims = dims.into();
        assert!(
            !dims.is_empty() && dims.iter().all(|&d| d >= 1),
            "tensor dims must be non-empty and positive: {dims:?}"
        );
        let len = dims.iter().product();
        Tensor {
            dims,
            data: vec![value; len],
        }
    }

    /// A rank-1 tensor. Panics on an empty vector.
    pub fn from_vec(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "rank-1 tensor needs at least one element");
        Tensor {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(dims);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data, new dims. The element count must not change.
    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        check_dims("reshape", &dims)?;
        let len: usize = dims.iter().product();
        if len != self.data.len() {
            return Err(TensorError::shape("reshape", "element count", self.data.len(), len));
        }
        Ok(Tensor { dims, data: self.data })
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_dims("zip_map", other.dims())?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_dims("add_assign", other.dims())?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest element (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Elementwise numeric conversion, e.g. `f64` training weights to `f32`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub(crate) fn expect_dims(&self, op: &'static str, dims: &[usize]) -> Result<()> {
        if self.dims.len() != dims.len() {
            return Err(TensorError::shape(op, "rank", dims.len(), self.dims.len()));
        }
        for (&a, &b) in self.dims.iter().zip(dims) {
            if a != b {
                return Err(TensorError::shape(op, "dimension", b, a));
            }
        }
        Ok(())
    }
}

fn check_dims(op: &'static str, dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(TensorError::invalid(op, "tensor needs at least one dimension"));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(TensorError::invalid(op, format!("dimension {pos} is zero")));
    }
    Ok(())
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor").field("dims", &self.dims).field("head", &preview).finish()
    }
}

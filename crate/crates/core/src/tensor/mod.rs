//! Dense tensors, a tape-based reverse-mode autodiff engine, parameters,
//! the Adam optimizer and a finite-difference gradient checker.
//!
//! Tensors are row-major with rank 1 to 4. Four-dimensional tensors use the
//! `[batch, channel, height, width]` layout everywhere.

pub mod container;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod rng;

pub use graph::{CustomOp, Gradients, Graph, Var, BCE_CLAMP};
pub use optim::{adam_update, Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use rng::SeededRng;

use crate::error::{DlgError, Result};

/// Element type of every tensor. `f32` unless the `double` feature is enabled.
#[cfg(not(feature = "double"))]
pub type Scalar = f32;
#[cfg(feature = "double")]
pub type Scalar = f64;

/// Dtype tag written into tensor containers for the current build.
#[cfg(not(feature = "double"))]
pub const SCALAR_DTYPE: u8 = 0;
#[cfg(feature = "double")]
pub const SCALAR_DTYPE: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Scalar>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<Scalar>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(DlgError::shape(format!(
                "rank must be 1..=4, got shape {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(DlgError::shape(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: Scalar) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel]).expect("valid shape")
    }

    pub fn scalar(value: Scalar) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Scalar) -> Self {
        let numel: usize = shape.iter().product();
        Self::new(shape, (0..numel).map(&mut f).collect()).expect("valid shape")
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform(shape: &[usize], bound: Scalar, rng: &mut SeededRng) -> Self {
        Self::from_fn(shape, |_| rng.uniform_symmetric(bound))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Scalar] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Scalar> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `[n, c, h, w]` extents of a rank-4 tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok([n, c, h, w]),
            other => Err(DlgError::shape(format!(
                "expected a rank-4 tensor, got shape {other:?}"
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.is_empty() || shape.len() > 4 {
            return Err(DlgError::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> Scalar {
        let [_, cc, h, w] = self.dims4().expect("rank-4 tensor");
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn set4(&mut self, n: usize, c: usize, y: usize, x: usize, v: Scalar) {
        let [_, cc, h, w] = self.dims4().expect("rank-4 tensor");
        self.data[((n * cc + c) * h + y) * w + x] = v;
    }

    pub fn map(&self, f: impl Fn(Scalar) -> Scalar) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_distance(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "l2_distance shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `index` along the leading axis, in the given order.
    pub fn select_batch(&self, index: &[usize]) -> Result<Self> {
        let n = self.shape[0];
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(index.len() * inner);
        for &i in index {
            if i >= n {
                return Err(DlgError::shape(format!(
                    "batch index {i} out of range for extent {n}"
                )));
            }
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = index.len();
        Tensor::new(&shape, data)
    }

    /// Concatenate along the leading axis.
    pub fn cat_batch(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| DlgError::invalid("cat_batch of zero tensors"))?;
        let tail = &first.shape[1..];
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(DlgError::shape(format!(
                    "cat_batch: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Tensor::new(&shape, data)
    }
}

//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The numerical substrate for the rest of the crate: immutable row-major
//! tensors of up to four axes (activations are N×C×H×W), an eager tape-style
//! [`Graph`] with hand-derived backward rules for each primitive, an Adam
//! optimizer, and a central-finite-difference gradient checker.
//!
//! Training runs in `f32`; the gradient checker runs the identical generic
//! code paths in `f64`, where central differences are trustworthy.

mod adam;
mod graph;
mod gradcheck;
pub mod io;
mod ops;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::finite_diff_grad;
pub use graph::{Gradients, Graph, NodeId, Op};

use std::fmt;
use std::sync::Arc;

/// Element type of a [`Tensor`]: `f32` for training/inference, `f64` for
/// gradient checking and oracle computations.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const DTYPE: DType;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub const MAX_AXES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch { op: &'static str, lhs: String, rhs: String },
    #[error("{op}: invalid input shape {shape}: {reason}")]
    InvalidShape { op: &'static str, shape: String, reason: String },
    #[error("tensor data length {len} does not match shape {shape}")]
    LengthMismatch { shape: String, len: usize },
    #[error("tensors are limited to {MAX_AXES} axes, got shape {shape}")]
    TooManyAxes { shape: String },
    #[error("backward requires a scalar loss node, got shape {shape}")]
    NonScalarLoss { shape: String },
    #[error("{op}: label {label} out of range for {classes} classes")]
    LabelOutOfRange { op: &'static str, label: usize, classes: usize },
    #[error("{op}: index {index} out of range for {len} elements")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
}

pub fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".to_string();
    }
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Immutable dense tensor. Cloning is cheap (shared storage).
#[derive(Clone, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Arc<[E]>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: &[usize], data: Vec<E>) -> Result<Self, TensorError> {
        if shape.len() > MAX_AXES {
            return Err(TensorError::TooManyAxes { shape: format_shape(shape) });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: format_shape(shape),
                len: data.len(),
            });
        }
        Ok(Self { shape: shape.to_vec(), data: data.into() })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![E::zero(); numel].into() }
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel].into() }
    }

    pub fn scalar(value: E) -> Self {
        Self { shape: vec![1], data: vec![value].into() }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let numel: usize = shape.iter().product();
        let data: Vec<E> = (0..numel).map(&mut f).collect();
        Self { shape: shape.to_vec(), data: data.into() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn item(&self) -> E {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Same storage, new shape; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        if shape.len() > MAX_AXES {
            return Err(TensorError::TooManyAxes { shape: format_shape(shape) });
        }
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::LengthMismatch {
                shape: format_shape(shape),
                len: self.numel(),
            });
        }
        Ok(Self { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        let data: Vec<E> = self.data.iter().map(|&v| f(v)).collect();
        Self { shape: self.shape.clone(), data: data.into() }
    }

    pub fn convert<F: Scalar>(&self) -> Tensor<F> {
        let data: Vec<F> = self.data.iter().map(|&v| F::from_f64(v.to_f64())).collect();
        Tensor { shape: self.shape.clone(), data: data.into() }
    }

    pub fn max_abs(&self) -> E {
        self.data.iter().fold(E::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate same-shape tensors along a fresh leading axis.
    pub fn stack(items: &[&Tensor<E>]) -> Result<Self, TensorError> {
        let first = items.first().ok_or(TensorError::InvalidShape {
            op: "stack",
            shape: "-".into(),
            reason: "empty input".into(),
        })?;
        let mut shape = Vec::with_capacity(first.shape.len() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&first.shape);
        if shape.len() > MAX_AXES {
            return Err(TensorError::TooManyAxes { shape: format_shape(&shape) });
        }
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: format_shape(&first.shape),
                    rhs: format_shape(&t.shape),
                });
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape, data: data.into() })
    }
}

impl<E: Scalar> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>[{}]", E::DTYPE.name(), format_shape(&self.shape))?;
        if self.numel() <= 8 {
            write!(f, " {:?}", &self.data[..])?;
        }
        Ok(())
    }
}

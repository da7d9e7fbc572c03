//! Dense `f32` tensors stored in channel-last order.
//!
//! 4-D weights are laid out as `(out_channels, height, width, in_channels)`
//! with the last dimension varying fastest, so the storage order already is
//! the 1-D view consumed by pruning, quantization and encoding.

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK || dims.contains(&0) {
            return Err(Error::InvalidShape(dims.to_vec()));
        }
        Ok(Self(dims.to_vec()))
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

    /// Dimensions right-aligned into four slots, leading slots padded with 1.
    pub fn padded4(&self) -> [usize; 4] {
        let mut out = [1; 4];
        let off = MAX_RANK - self.0.len();
        out[off..].copy_from_slice(&self.0);
        out
    }

    /// Channel-last linear index of a multi-index (last dim fastest).
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.0.len());
        idx.iter()
            .zip(&self.0)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::LengthMismatch {
                expected: shape.numel(),
                data: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub fn from_dims(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        Self::new(Shape::new(dims)?, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Mutable access for in-place training updates. Callers keep values finite.
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, idx: &[usize]) -> f32 {
        self.data[self.shape.linear_index(idx)]
    }

    /// Rebuild a tensor of `shape` from a flat channel-last array.
    pub fn reshape(flat: &[f32], shape: Shape) -> Result<Self> {
        Self::new(shape, flat.to_vec())
    }
}

/// The 1-D channel-last view of `t`. Storage is already linearized, so this
/// is a borrow.
pub fn flatten_channel_last(t: &Tensor) -> &[f32] {
    &t.data
}

pub fn l2_norm(segment: &[f32]) -> Result<f32> {
    if segment.is_empty() {
        return Err(Error::EmptyGroup);
    }
    Ok(sum_squares(segment).sqrt() as f32)
}

pub(crate) fn sum_squares(segment: &[f32]) -> f64 {
    segment.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

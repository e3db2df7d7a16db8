//! Dense row-major tensors and the reverse-mode autodiff tape built on them.
//!
//! Everything in this module is generic over [`Scalar`] so the same model code
//! runs in 32-bit floats for training speed and 64-bit floats for gradient
//! checking.

pub mod batchnorm;
pub mod check;
pub mod conv;
pub mod init;
pub mod ops;
pub mod optim;
pub mod tape;

use std::fmt;
use std::sync::Arc;

use num_traits::{Float, NumAssign};

use crate::error::{Error, Result};

/// Floating-point element type: `f32` or `f64`.
pub trait Scalar:
    Float + NumAssign + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const NAME: &'static str;
    const BYTES: usize;

    fn from_f64(x: f64) -> Self;
    fn to_f64_(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64_(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64_(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

/// Row-major strides for a shape. The stride of a size-1 trailing dim is 1;
/// a rank-0 shape yields an empty stride vector.
pub fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Dense row-major tensor. Data is shared on clone (copy-on-write via
/// [`Tensor::data_mut`]), so cloning into the tape or a checkpoint is cheap.
#[derive(Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![S::zero(); len]) }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![value; len]) }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: S) -> Self {
        Tensor { shape: Vec::new(), data: Arc::new(vec![value]) }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} needs {} elements, got {}", shape, expect, data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::new(data) })
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![S::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = S::one();
        }
        Tensor { shape: vec![n, n], data: Arc::new(data) }
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Mutable access; clones the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [S] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Value of a rank-0 (or single-element) tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.len(), 1, "item() on tensor with {} elements", self.len());
        self.data[0]
    }

    /// Element at a full multi-index.
    pub fn at(&self, index: &[usize]) -> S {
        debug_assert_eq!(index.len(), self.shape.len());
        let strides = strides_for(&self.shape);
        let flat: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[flat]
    }

    /// Same data viewed under a different shape (element count must match).
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} ({} elems) as {:?}", self.shape, self.len(), shape),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    /// New tensor with axes permuted (data is materialized, not a view).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let (shape, data) = permute_data(&self.shape, &self.data, perm)?;
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        let data: Vec<S> = self.data.iter().map(|&x| f(x)).collect();
        Tensor { shape: self.shape.clone(), data: Arc::new(data) }
    }

    /// Flat index of the first non-finite element, if any.
    pub fn first_nonfinite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        match self.first_nonfinite() {
            Some(index) => Err(Error::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    /// Convert elements to another scalar type (through f64).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data: Vec<T> = self.data.iter().map(|&x| T::from_f64(x.to_f64_())).collect();
        Tensor { shape: self.shape.clone(), data: Arc::new(data) }
    }
}

/// Permute `data` (row-major under `shape`) by `perm`; returns the new shape
/// and buffer. `perm[i]` names the source axis that lands at output axis `i`.
pub fn permute_data<S: Copy>(
    shape: &[usize],
    data: &[S],
    perm: &[usize],
) -> Result<(Vec<usize>, Vec<S>)> {
    if perm.len() != shape.len() {
        return Err(Error::shape("permute", format!("perm {:?} vs shape {:?}", perm, shape)));
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return Err(Error::shape("permute", format!("invalid permutation {:?}", perm)));
        }
        seen[p] = true;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_for(shape);
    let out_len: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(out_len);
    // Odometer over the output multi-index; map to the source flat offset.
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..out_len {
        let src: usize = idx.iter().enumerate().map(|(i, &v)| v * in_strides[perm[i]]).sum();
        out.push(data[src]);
        for axis in (0..idx.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    Ok((out_shape, out))
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<String> = self.data.iter().take(8).map(|x| format!("{x}")).collect();
        write!(
            f,
            "Tensor{:?}[{}{}]",
            self.shape,
            preview.join(", "),
            if self.len() > 8 { ", …" } else { "" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides_for(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides_for(&[5]), vec![1]);
        assert!(strides_for(&[]).is_empty());
    }

    #[test]
    fn scalar_tensor_is_rank_zero() {
        let t = Tensor::scalar(3.5f64);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.len(), 1);
        assert_eq!(t.item(), 3.5);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0f32; 3]).is_err());
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let tt = t.permuted(&[1, 0]).unwrap();
        assert_eq!(tt.shape(), &[3, 2]);
        assert_eq!(tt.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn permute_rejects_bad_perm() {
        let t = Tensor::<f32>::zeros(&[2, 2]);
        assert!(t.permuted(&[0, 0]).is_err());
        assert!(t.permuted(&[0]).is_err());
    }

    #[test]
    fn nonfinite_detection() {
        let t = Tensor::from_vec(&[3], vec![1.0f32, f32::NAN, 2.0]).unwrap();
        assert_eq!(t.first_nonfinite(), Some(1));
        assert!(t.check_finite("test").is_err());
        let ok = Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap();
        assert!(ok.check_finite("test").is_ok());
    }
}

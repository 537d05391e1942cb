//! Dense row-major tensors and the primitive math the layers are built on.
//!
//! A [`Tensor`] is an owned, immutable-once-returned value: operations take
//! references and produce new tensors. Element type is selectable through
//! [`Scalar`] — `f32` for training speed, `f64` for verification mode
//! (gradient checks, oracle comparisons).

mod ops;

pub use ops::{bilinear_resize, col2im, crop_border, im2col, matmul, pad_same, reduce, ReduceKind};

use std::fmt;

use crate::error::{Error, Result};

/// Element type for tensors: `f32` or `f64`.
///
/// The trait is sealed in practice (only the two impls below make sense);
/// `from_f64`/`to_f64` are infallible conversions used for constants and
/// logging, `from_f32`/`to_f32` back the checkpoint wire format.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Precision name as spelled on the CLI (`f32` / `f64`).
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Spatial height/width pair used for kernels, resize targets and input specs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Shape2d {
    pub height: usize,
    pub width: usize,
}

impl Shape2d {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "Shape2d dimensions must be >= 1, got {height}x{width}"
            )));
        }
        Ok(Shape2d { height, width })
    }
}

impl fmt::Display for Shape2d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Dense N-dimensional array (1 to 4 dims), row-major.
///
/// Image batches use `(batch, channel, height, width)` order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::ShapeMismatch(format!(
            "tensor rank must be 1..=4, got {:?}",
            shape
        )));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::ShapeMismatch(format!(
            "tensor dimensions must be positive, got {:?}",
            shape
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from a shape and flat row-major data.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        validate_shape(shape)?;
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements but {} were provided",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// All-zero tensor. Panics on an invalid shape (programmer error).
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    /// Constant tensor. Panics on an invalid shape (programmer error).
    pub fn filled(shape: &[usize], value: T) -> Self {
        validate_shape(shape).expect("invalid tensor shape");
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Tensor whose element at flat index `i` is `f(i)`.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        validate_shape(shape).expect("invalid tensor shape");
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        validate_shape(shape)?;
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at3(&self, c: usize, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 3);
        self.data[(c * self.shape[1] + i) * self.shape[2] + j]
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 4);
        self.data[((b * self.shape[1] + c) * self.shape[2] + i) * self.shape[3] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        debug_assert_eq!(self.rank(), 2);
        let w = self.shape[1];
        self.data[i * w + j] = v;
    }

    #[inline]
    pub fn set3(&mut self, c: usize, i: usize, j: usize, v: T) {
        debug_assert_eq!(self.rank(), 3);
        let (h, w) = (self.shape[1], self.shape[2]);
        let _ = h;
        self.data[(c * self.shape[1] + i) * w + j] = v;
    }

    #[inline]
    pub fn set4(&mut self, b: usize, c: usize, i: usize, j: usize, v: T) {
        debug_assert_eq!(self.rank(), 4);
        let idx = ((b * self.shape[1] + c) * self.shape[2] + i) * self.shape[3] + j;
        self.data[idx] = v;
    }

    /// Copy one batch sample of a rank-4 tensor into a rank-3 tensor.
    pub fn batch_item(&self, b: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 4, "batch_item requires a rank-4 tensor");
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[b * per..(b + 1) * per].to_vec(),
        }
    }

    /// Write a rank-3 sample back into row `b` of a rank-4 tensor.
    pub fn set_batch_item(&mut self, b: usize, item: &Tensor<T>) {
        assert_eq!(self.rank(), 4);
        assert_eq!(&self.shape[1..], item.shape(), "sample shape mismatch");
        let per = item.len();
        self.data[b * per..(b + 1) * per].copy_from_slice(item.data());
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Tensor<T> {
        self.map(|v| v * k)
    }

    /// Sequential sum of every element (deterministic order).
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    pub fn max_value(&self) -> T {
        let mut m = T::neg_infinity();
        for &v in &self.data {
            if v > m {
                m = v;
            }
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert element precision; used by checkpoint save/load.
    pub fn to_precision<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} elements]", self.data.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_and_length() {
        assert!(Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).is_ok());
        assert!(matches!(
            Tensor::<f64>::new(&[2, 2], vec![1.0]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(Tensor::<f64>::new(&[], vec![]).is_err());
        assert!(Tensor::<f64>::new(&[1, 2, 3, 4, 5], vec![0.0; 120]).is_err());
        assert!(Tensor::<f64>::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f64>::new(&[2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn batch_item_round_trip() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 2, 2], |i| i as f64);
        let s1 = t.batch_item(1);
        assert_eq!(s1.shape(), &[3, 2, 2]);
        assert_eq!(s1.data()[0], 12.0);
        let mut u = Tensor::<f64>::zeros(&[2, 3, 2, 2]);
        u.set_batch_item(1, &s1);
        assert_eq!(u.batch_item(1), s1);
    }

    #[test]
    fn elementwise_shape_checked() {
        let a = Tensor::<f64>::filled(&[2, 2], 1.0);
        let b = Tensor::<f64>::filled(&[2, 3], 1.0);
        assert!(a.add(&b).is_err());
        let c = a.add(&a).unwrap();
        assert_eq!(c.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn precision_round_trip() {
        let a = Tensor::<f32>::new(&[3], vec![0.5, -1.25, 3.0]).unwrap();
        let d: Tensor<f64> = a.to_precision();
        let back: Tensor<f32> = d.to_precision();
        assert_eq!(a, back);
    }
}

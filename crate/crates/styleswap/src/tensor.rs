//! Dense numeric arrays in row-major layout.
//!
//! [`Tensor`] is the universal value for images, activations, weights and
//! gradients. Rank 3 is `height x width x channels`; rank 4 adds a leading
//! extent (patch or filter count). Element type is generic: `f32` is the
//! working precision, `f64` exists so finite-difference gradient checks have
//! headroom.
//!
//! Reductions accumulate sequentially in index order, so they match a naive
//! scalar loop exactly at the same precision and never depend on thread
//! count.

use std::fmt;

use rand::distributions::uniform::SampleUniform;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Element type for tensors: `f32` (default precision) or `f64`
/// (gradient-check precision).
pub trait Scalar:
    num_traits::Float + SampleUniform + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major array. Immutable by convention after construction:
/// operations return new tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
        });
    }
    let mut len: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
            });
        }
        len = len.checked_mul(e).ok_or(Error::InvalidShape {
            shape: shape.to_vec(),
        })?;
    }
    Ok(len)
}

impl<T: Scalar> Tensor<T> {
    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = checked_len(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = checked_len(shape)?;
        if data.len() != len {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Elements drawn independently from `U[lo, hi)`. Bit-identical for a
    /// given seed and element type on every platform.
    pub fn random_uniform(shape: &[usize], lo: T, hi: T, rng: &mut SeededRng) -> Result<Self> {
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(Error::InvalidRange {
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        let len = checked_len(shape)?;
        let data = (0..len).map(|_| rng.next_in_range(lo, hi)).collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
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

    /// `(h, w, d)` of a rank-3 tensor.
    pub fn dims3(&self) -> (usize, usize, usize) {
        debug_assert_eq!(self.rank(), 3, "dims3 on rank-{} tensor", self.rank());
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        debug_assert_eq!(self.rank(), 4, "dims4 on rank-{} tensor", self.rank());
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    #[inline]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.idx3(i, j, k)]
    }

    /// Reinterpret the buffer under a new shape of equal length.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let len = checked_len(shape)?;
        if len != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                got: self.shape,
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|a| a * factor)
    }

    pub fn map<F: Fn(T) -> T>(&self, f: F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn zip_map<F: Fn(T, T) -> T>(&self, other: &Self, f: F) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// `self += alpha * other`, used for gradient accumulation and updates.
    pub fn add_scaled_assign(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc = acc + v;
        }
        acc
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    pub fn max_value(&self) -> T {
        let mut m = self.data[0];
        for &v in &self.data[1..] {
            if v > m {
                m = v;
            }
        }
        m
    }

    pub fn frobenius_norm_sq(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc = acc + v * v;
        }
        acc
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|a| if a < lo { lo } else if a > hi { hi } else { a })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossy element-wise conversion between precisions.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_constructors() {
        let z = Tensor::<f32>::zeros(&[2, 2, 1]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let f = Tensor::<f32>::full(&[1, 1, 3], 2.5).unwrap();
        assert_eq!(f.data(), &[2.5, 2.5, 2.5]);
        let o = Tensor::<f32>::ones(&[3, 3, 2]).unwrap();
        assert_eq!(o.sum(), 18.0);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(matches!(
            Tensor::<f32>::zeros(&[2, 0, 3]),
            Err(Error::InvalidShape { .. })
        ));
        assert!(matches!(
            Tensor::<f32>::zeros(&[]),
            Err(Error::InvalidShape { .. })
        ));
    }

    #[test]
    fn random_uniform_is_seed_deterministic() {
        let a = Tensor::<f32>::random_uniform(&[4, 5, 3], 0.0, 1.0, &mut SeededRng::new(7)).unwrap();
        let b = Tensor::<f32>::random_uniform(&[4, 5, 3], 0.0, 1.0, &mut SeededRng::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_uniform_range_and_mean() {
        let t =
            Tensor::<f64>::random_uniform(&[100, 100, 10], 0.0, 1.0, &mut SeededRng::new(1)).unwrap();
        let min = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min >= 0.0 && max < 1.0);
        // law of large numbers: 1e5 samples of U(0,1)
        assert!((t.mean() - 0.5).abs() < 0.01);
    }

    #[test]
    fn random_uniform_rejects_bad_range() {
        assert!(matches!(
            Tensor::<f32>::random_uniform(&[2, 2, 2], 1.0, 1.0, &mut SeededRng::new(0)),
            Err(Error::InvalidRange { .. })
        ));
    }

    #[test]
    fn frobenius_hand_value() {
        let t = Tensor::<f32>::from_vec(&[1, 2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(t.frobenius_norm_sq(), 25.0);
    }

    #[test]
    fn add_identity() {
        let mut rng = SeededRng::new(2);
        let x = Tensor::<f32>::random_uniform(&[3, 4, 2], -1.0, 1.0, &mut rng).unwrap();
        let z = Tensor::<f32>::zeros(x.shape()).unwrap();
        assert_eq!(z.add(&x).unwrap(), x);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::<f32>::zeros(&[2, 2, 2]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 2, 3]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn reductions_match_scalar_loop() {
        let mut rng = SeededRng::new(3);
        let t = Tensor::<f32>::random_uniform(&[7, 9, 4], -2.0, 2.0, &mut rng).unwrap();
        let mut sum = 0.0f32;
        let mut sq = 0.0f32;
        for &v in t.data() {
            sum += v;
            sq += v * v;
        }
        // sequential accumulation in index order: exact at equal precision
        assert_eq!(t.sum(), sum);
        assert_eq!(t.frobenius_norm_sq(), sq);

        let t64 = t.cast::<f64>();
        let mut sq64 = 0.0f64;
        for &v in t64.data() {
            sq64 += v * v;
        }
        assert_eq!(t64.frobenius_norm_sq(), sq64);
    }

    #[test]
    fn flatten_reshape_roundtrip() {
        let mut rng = SeededRng::new(4);
        let t = Tensor::<f32>::random_uniform(&[3, 5, 2], 0.0, 1.0, &mut rng).unwrap();
        let flat = t.clone().reshape(&[30]).unwrap();
        let back = flat.reshape(&[3, 5, 2]).unwrap();
        assert_eq!(back, t);
    }
}

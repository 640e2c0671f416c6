//! Dense row-major tensors.

use std::fmt::Debug;

use ecog_core::dataset::EpochSet;
use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::{NnError, Result};

/// Element type of the engine: `f32` for training and inference, `f64` for
/// the gradient-check mirror.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for constants inside generic code.
#[inline]
pub(crate) fn c<T: Scalar>(v: f64) -> T {
    T::from_f64(v).unwrap()
}

/// `shape.iter().product() == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type TensorN = Tensor<f32>;

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::invalid(format!("shape {shape:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NnError::invalid(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batch items at `indices`, in order.
    pub fn gather(&self, indices: &[usize]) -> Tensor<T> {
        let item = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * item);
        for &i in indices {
            data.extend_from_slice(&self.data[i * item..(i + 1) * item]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    /// Index of the largest entry of each row of a `[n, k]` tensor; ties go
    /// to the smaller index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let k = self.item_len();
        self.data
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect()
    }
}

/// Epochs × time × channels × 1, the 2D-CNN input layout.
pub fn epochs_to_tensor(epochs: &EpochSet) -> TensorN {
    let (n, t, ch) = epochs.data().dim();
    let data = epochs.data().as_standard_layout().iter().copied().collect();
    Tensor { shape: vec![n, t, ch, 1], data }
}

/// `[n, n_classes]` one-hot targets.
pub fn one_hot_tensor<T: Scalar>(labels: &[usize], n_classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len(), n_classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(NnError::invalid(format!("label {l} does not fit a {n_classes}-class head")));
        }
        t.data[i * n_classes + l] = T::one();
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_invariant() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.item_len(), 3);
        assert!(t.clone().reshape(vec![3, 2]).is_ok());
        assert!(t.reshape(vec![4]).is_err());
    }

    #[test]
    fn gather_and_argmax() {
        let t = Tensor::<f32>::new(vec![3, 2], vec![0.0, 1.0, 5.0, 5.0, 2.0, 1.0]).unwrap();
        assert_eq!(t.argmax_rows(), vec![1, 0, 0]);
        let g = t.gather(&[2, 0]);
        assert_eq!(g.data(), &[2.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn one_hot_rejects_large_label() {
        assert!(one_hot_tensor::<f32>(&[0, 2], 2).is_err());
        let t = one_hot_tensor::<f32>(&[1, 0], 2).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}

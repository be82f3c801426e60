use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// An immutable shaped buffer. Cloning is cheap (the storage is shared).
#[derive(Clone, Debug)]
pub struct TensorData<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> TensorData<T> {
    /// Builds a tensor, checking that the buffer length matches the shape.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::shape(
                "TensorData::new",
                format!("shape {:?} implies {} elements, buffer has {}", shape, numel, data.len()),
            ));
        }
        Ok(TensorData { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        TensorData { shape, data: Arc::new(vec![T::zero(); numel]) }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel: usize = shape.iter().product();
        TensorData { shape, data: Arc::new(vec![value; numel]) }
    }

    pub fn scalar(value: T) -> Self {
        TensorData { shape: vec![], data: Arc::new(vec![value]) }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        TensorData { shape, data: Arc::new((0..numel).map(&mut f).collect()) }
    }

    pub(crate) fn from_shared(shape: Vec<usize>, data: Arc<Vec<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        TensorData { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn shared(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    /// Copy of the buffer as a plain vector.
    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    /// Element-wise cast into another scalar type.
    pub fn cast<U: Scalar>(&self) -> TensorData<U> {
        TensorData {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect()),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

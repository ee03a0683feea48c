//! Dense tensor value: a shape and a row-major buffer.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorData<S> {
    pub shape: Vec<usize>,
    pub values: Vec<S>,
}

impl<S: Scalar> TensorData<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape {shape:?} does not match {} values",
            values.len()
        );
        Self { shape, values }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, values: vec![S::zero(); n] }
    }

    pub fn scalar(v: S) -> Self {
        Self { shape: vec![], values: vec![v] }
    }

    pub fn from_f64_slice(shape: Vec<usize>, values: &[f64]) -> Self {
        Self::new(shape, values.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn scalar_value(&self) -> S {
        debug_assert!(self.is_scalar());
        self.values[0]
    }

    /// Number of rows when viewed as a [rows, cols] matrix.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() <= 1 {
            self.values.len()
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<T: Scalar>(&self) -> TensorData<T> {
        TensorData {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }
}

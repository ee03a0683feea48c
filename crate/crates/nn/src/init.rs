//! Seeded weight initializers.

use crate::scalar::Scalar;
use crate::tensor::TensorData;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform Kaiming-style fan-in init, the usual choice for leaky-ReLU MLPs.
pub fn kaiming_uniform<S: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> TensorData<S> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect();
    TensorData::new(shape, values)
}

pub fn zeros<S: Scalar>(shape: Vec<usize>) -> TensorData<S> {
    TensorData::zeros(shape)
}

pub fn constant<S: Scalar>(shape: Vec<usize>, v: f64) -> TensorData<S> {
    let n: usize = shape.iter().product();
    TensorData::new(shape, vec![S::from_f64(v); n])
}

/// Standard normal samples scaled by `std`.
pub fn gaussian<S: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> TensorData<S> {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| S::from_f64(gauss(rng) * std)).collect();
    TensorData::new(shape, values)
}

/// Box-Muller; two uniforms per draw keeps the stream layout simple and seeded.
pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

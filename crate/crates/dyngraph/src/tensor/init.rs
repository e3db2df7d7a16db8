//! Weight initialization. Draws happen in f64 and are cast to the working
//! precision, so a given seed produces the same initialization pattern in
//! both float modes.

use rand::Rng;

use super::{Scalar, Tensor};

/// Glorot/Xavier uniform: U(−a, a) with a = √(6 / (fan_in + fan_out)).
pub fn glorot_uniform<S: Scalar, R: Rng>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<S> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<S> = (0..len).map(|_| S::from_f64(rng.gen_range(-a..a))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Fan-in/fan-out of a (C_out, C_in, 1, K) conv kernel.
pub fn conv_fans(shape: &[usize]) -> (usize, usize) {
    debug_assert_eq!(shape.len(), 4);
    (shape[1] * shape[3], shape[0] * shape[3])
}

/// Fan-in/fan-out of an (in, out) projection matrix.
pub fn linear_fans(shape: &[usize]) -> (usize, usize) {
    debug_assert_eq!(shape.len(), 2);
    (shape[0], shape[1])
}

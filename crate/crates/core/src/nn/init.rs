use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [out, inp] => Ok((inp, out)),
        [out, inp, kh, kw] => Ok((inp * kh * kw, out * kh * kw)),
        _ => Err(Error::invalid(format!(
            "no fan-in/fan-out defined for weight shape {shape:?}"
        ))),
    }
}

/// Glorot-uniform weights for a `[out, in]` dense or `[out, in, kh, kw]`
/// convolution weight tensor.
pub fn glorot_uniform_init<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = fans(shape)?;
    let b = glorot_bound(fan_in, fan_out);
    Ok(Tensor::from_fn(shape, |_| T::of(rng.random_range(-b..=b))))
}

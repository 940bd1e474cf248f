use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{Scalar, Tensor};

/// Half-width of the Glorot uniform interval, `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// I.i.d. samples from `U[-a, a]` with `a = glorot_bound(fan_in, fan_out)`.
pub fn glorot_uniform_init<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::domain(format!(
            "glorot init needs positive fans, got fan_in={fan_in} fan_out={fan_out}"
        )));
    }
    let bound = glorot_bound(fan_in, fan_out);
    let mut t = Tensor::zeros(shape)?;
    let mut rng = seeded(seed);
    for x in t.data_mut() {
        *x = T::from_f64_lossy(rng.random_range(-bound..=bound));
    }
    Ok(t)
}

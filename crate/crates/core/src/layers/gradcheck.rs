//! Central finite-difference gradient checking.
//!
//! The checker scores a backward rule by the worst relative error between
//! analytic and numeric derivatives over every parameter and input element.
//! Run it in `f64` (verification mode); in `f32` the difference quotient
//! drowns in rounding noise long before 1e-5.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Probe weights for the scalar loss `sum(R .* output)`; a fixed random `R`
/// exposes asymmetric backward bugs a plain sum would cancel out.
fn probe_weights<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-1.0..1.0)))
}

/// Max relative error of a layer's backward rule against central finite
/// differences, over all parameters and input elements.
///
/// Every forward evaluation receives a freshly reseeded RNG, so stochastic
/// layers (dropout) see an identical frozen mask at each probe point.
pub fn check_layer<T: Scalar>(
    layer: &mut dyn Layer<T>,
    input: &Tensor<T>,
    mode: Mode,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    let fresh_rng = || ChaCha8Rng::seed_from_u64(seed);

    let output = layer.forward(input, mode, &mut fresh_rng())?;
    if !output.all_finite() {
        return Err(Error::Numeric("gradient check: non-finite forward".into()));
    }
    let probe = probe_weights::<T>(output.shape(), seed);
    let bundle = layer.backward(&probe)?;

    let loss_of = |out: &Tensor<T>| -> f64 {
        out.mul(&probe).expect("probe shape matches").sum().to_f64()
    };

    let mut max_err = 0.0f64;

    // Parameters.
    let n_params = layer.params().len();
    for pi in 0..n_params {
        let n_elems = layer.params()[pi].1.len();
        for j in 0..n_elems {
            let orig = layer.params()[pi].1.data()[j];
            let hp = orig + T::from_f64(epsilon);
            let hm = orig - T::from_f64(epsilon);

            layer.params_mut()[pi].1.data_mut()[j] = hp;
            let fp = loss_of(&layer.forward(input, mode, &mut fresh_rng())?);
            layer.params_mut()[pi].1.data_mut()[j] = hm;
            let fm = loss_of(&layer.forward(input, mode, &mut fresh_rng())?);
            layer.params_mut()[pi].1.data_mut()[j] = orig;

            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Numeric("gradient check: non-finite loss".into()));
            }
            let numeric = (fp - fm) / (hp - hm).to_f64();
            let analytic = bundle.grads[pi].1.data()[j].to_f64();
            max_err = max_err.max(relative_error(analytic, numeric));
        }
    }

    // Input.
    let mut x = input.clone();
    for j in 0..x.len() {
        let orig = x.data()[j];
        let hp = orig + T::from_f64(epsilon);
        let hm = orig - T::from_f64(epsilon);

        x.data_mut()[j] = hp;
        let fp = loss_of(&layer.forward(&x, mode, &mut fresh_rng())?);
        x.data_mut()[j] = hm;
        let fm = loss_of(&layer.forward(&x, mode, &mut fresh_rng())?);
        x.data_mut()[j] = orig;

        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric("gradient check: non-finite loss".into()));
        }
        let numeric = (fp - fm) / (hp - hm).to_f64();
        let analytic = bundle.input_grad.data()[j].to_f64();
        max_err = max_err.max(relative_error(analytic, numeric));
    }

    Ok(max_err)
}

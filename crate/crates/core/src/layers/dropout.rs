//! Inverted dropout: survivors are rescaled at train time so inference is
//! the identity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{state_error, GradBundle, Layer, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub struct Dropout<T> {
    rate: f64,
    mask: Option<Tensor<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Dropout
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        match mode {
            Mode::Infer => {
                self.mask = Some(Tensor::filled(x.shape(), T::one()));
                Ok(x.clone())
            }
            Mode::Train => {
                if self.rate == 0.0 {
                    self.mask = Some(Tensor::filled(x.shape(), T::one()));
                    return Ok(x.clone());
                }
                let keep_scale = T::from_f64(1.0 / (1.0 - self.rate));
                let mask = Tensor::from_fn(x.shape(), |_| {
                    if rng.random::<f64>() < self.rate {
                        T::zero()
                    } else {
                        keep_scale
                    }
                });
                let out = x.mul(&mask)?;
                self.mask = Some(mask);
                Ok(out)
            }
        }
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>> {
        let mask = match self.mask.as_ref() {
            Some(m) => m,
            None => return state_error("dropout"),
        };
        Ok(GradBundle::leaf(upstream.mul(mask)?))
    }
}

//! Flatten trailing dimensions into a feature vector per batch row.

use rand_chacha::ChaCha8Rng;

use super::{state_error, GradBundle, Layer, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub struct Flatten {
    in_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten { in_shape: None }
    }
}

impl Default for Flatten {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn kind(&self) -> LayerKind {
        LayerKind::Flatten
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        if x.rank() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "flatten expects rank >= 2, got {:?}",
                x.shape()
            )));
        }
        let b = x.shape()[0];
        let rest: usize = x.shape()[1..].iter().product();
        self.in_shape = Some(x.shape().to_vec());
        x.reshape(&[b, rest])
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>> {
        let shape = match self.in_shape.as_ref() {
            Some(s) => s,
            None => return state_error("flatten"),
        };
        Ok(GradBundle::leaf(upstream.reshape(shape)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trips_shape() {
        let mut f = Flatten::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 5], |i| i as f64);
        let y = f.forward(&x, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y.shape(), &[2, 60]);
        let back = f.backward(&y).unwrap();
        assert_eq!(back.input_grad, x);
    }
}

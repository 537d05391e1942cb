//! Activation layers: relu, sigmoid and row-wise softmax.

use rand_chacha::ChaCha8Rng;

use super::{state_error, GradBundle, Layer, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub struct Relu<T> {
    input: Option<Tensor<T>>,
}

impl<T> Relu<T> {
    pub fn new() -> Self {
        Relu { input: None }
    }
}

impl<T> Default for Relu<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Relu
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        self.input = Some(x.clone());
        Ok(x.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>> {
        let x = match self.input.as_ref() {
            Some(x) => x,
            None => return state_error("relu"),
        };
        let dx = upstream.zip_map(x, |g, v| if v > T::zero() { g } else { T::zero() })?;
        Ok(GradBundle::leaf(dx))
    }
}

pub struct Sigmoid<T> {
    output: Option<Tensor<T>>,
}

impl<T> Sigmoid<T> {
    pub fn new() -> Self {
        Sigmoid { output: None }
    }
}

impl<T> Default for Sigmoid<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for Sigmoid<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Sigmoid
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        let y = x.map(|v| T::one() / (T::one() + (-v).exp()));
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>> {
        let y = match self.output.as_ref() {
            Some(y) => y,
            None => return state_error("sigmoid"),
        };
        let dx = upstream.zip_map(y, |g, s| g * s * (T::one() - s))?;
        Ok(GradBundle::leaf(dx))
    }
}

/// Softmax over the class axis (axis 1 of a `(batch, classes)` tensor),
/// computed with max subtraction so large logits stay finite.
pub struct Softmax<T> {
    output: Option<Tensor<T>>,
}

impl<T> Softmax<T> {
    pub fn new() -> Self {
        Softmax { output: None }
    }
}

impl<T> Default for Softmax<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for Softmax<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Softmax
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        if x.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "softmax expects (batch, classes), got {:?}",
                x.shape()
            )));
        }
        let (b, k) = (x.shape()[0], x.shape()[1]);
        let mut y = Tensor::zeros(&[b, k]);
        for bi in 0..b {
            let row = &x.data()[bi * k..(bi + 1) * k];
            let mut m = T::neg_infinity();
            for &v in row {
                if v > m {
                    m = v;
                }
            }
            let mut denom = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                y.set2(bi, j, e);
                denom += e;
            }
            for j in 0..k {
                let v = y.at2(bi, j) / denom;
                y.set2(bi, j, v);
            }
        }
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>> {
        let y = match self.output.as_ref() {
            Some(y) => y,
            None => return state_error("softmax"),
        };
        if upstream.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!(
                "softmax backward: upstream {:?} vs output {:?}",
                upstream.shape(),
                y.shape()
            )));
        }
        let (b, k) = (y.shape()[0], y.shape()[1]);
        let mut dx = Tensor::zeros(&[b, k]);
        for bi in 0..b {
            let mut dot = T::zero();
            for j in 0..k {
                dot += upstream.at2(bi, j) * y.at2(bi, j);
            }
            for j in 0..k {
                dx.set2(bi, j, y.at2(bi, j) * (upstream.at2(bi, j) - dot));
            }
        }
        Ok(GradBundle::leaf(dx))
    }
}

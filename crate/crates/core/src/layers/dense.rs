//! Fully connected layer: `y = x Wᵀ + b`.

use rand_chacha::ChaCha8Rng;

use super::{state_error, GradBundle, Layer, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

/// Dense layer. Weight shape `(out, in)`, bias `(out)`; input `(batch, in)`.
pub struct Dense<T> {
    weight: Tensor<T>,
    bias: Tensor<T>,
    in_features: usize,
    out_features: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn with_params(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != weight.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "dense params: weight {:?} and bias {:?} are inconsistent",
                weight.shape(),
                bias.shape()
            )));
        }
        let (out_features, in_features) = (weight.shape()[0], weight.shape()[1]);
        Ok(Dense {
            weight,
            bias,
            in_features,
            out_features,
            input: None,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.in_features
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        if x.rank() != 2 || x.shape()[1] != self.in_features {
            return Err(Error::ShapeMismatch(format!(
                "dense expects (batch, {}), got {:?}",
                self.in_features,
                x.shape()
            )));
        }
        let b = x.shape()[0];
        // x (b, in) . Wᵀ (in, out)
        let wt = Tensor::from_fn(&[self.in_features, self.out_features], |i| {
            self.weight.at2(i % self.out_features, i / self.out_features)
        });
        let mut y = matmul(x, &wt)?;
        for bi in 0..b {
            for o in 0..self.out_features {
                let v = y.at2(bi, o) + self.bias.data()[o];
                y.set2(bi, o, v);
            }
        }
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>> {
        let x = match self.input.as_ref() {
            Some(x) => x,
            None => return state_error("dense"),
        };
        let b = x.shape()[0];
        if upstream.shape() != [b, self.out_features] {
            return Err(Error::ShapeMismatch(format!(
                "dense backward: upstream {:?}, expected {:?}",
                upstream.shape(),
                [b, self.out_features]
            )));
        }
        // dW = upstreamᵀ . x ; db = column sums ; dx = upstream . W
        let up_t = Tensor::from_fn(&[self.out_features, b], |i| {
            upstream.at2(i % b, i / b)
        });
        let dw = matmul(&up_t, x)?;
        let mut db = Tensor::zeros(&[self.out_features]);
        for o in 0..self.out_features {
            let mut s = T::zero();
            for bi in 0..b {
                s += upstream.at2(bi, o);
            }
            db.data_mut()[o] = s;
        }
        let dx = matmul(upstream, &self.weight)?;
        Ok(GradBundle {
            grads: vec![("weight", dw), ("bias", db)],
            input_grad: dx,
        })
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

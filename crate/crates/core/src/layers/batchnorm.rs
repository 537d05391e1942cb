//! Batch normalization over (batch, height, width) per channel.

use rand_chacha::ChaCha8Rng;

use super::{state_error, GradBundle, Layer, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BATCHNORM_EPSILON: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

struct BnCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
    count: usize,
}

/// Batchnorm layer. Train mode normalizes with biased batch statistics and
/// updates running stats as `running <- m*running + (1-m)*batch`; infer mode
/// uses the running statistics, which makes it deterministic and independent
/// of batch composition.
///
/// Inference before either a train step or a checkpoint load is an invalid
/// state: the running statistics would be meaningless.
pub struct BatchNorm2d<T> {
    gamma: Tensor<T>,
    beta: Tensor<T>,
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
    stats_ready: bool,
    channels: usize,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            stats_ready: false,
            channels,
            cache: None,
        }
    }

    /// Install running statistics directly (tests, custom model assembly).
    pub fn set_running_stats(&mut self, mean: Tensor<T>, var: Tensor<T>) -> Result<()> {
        if mean.shape() != [self.channels] || var.shape() != [self.channels] {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm stats must have shape [{}], got {:?} / {:?}",
                self.channels,
                mean.shape(),
                var.shape()
            )));
        }
        if var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidArgument(
                "batchnorm running variance must be non-negative".into(),
            ));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.stats_ready = true;
        Ok(())
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm2d
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode, _rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape()[1] != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm2d expects (batch, {}, h, w), got {:?}",
                self.channels,
                x.shape()
            )));
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let n = b * h * w;
        let eps = T::from_f64(BATCHNORM_EPSILON);

        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batchnorm train mode needs batch*h*w >= 2 per channel, got {n}"
                    )));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        for i in 0..h {
                            for j in 0..w {
                                s += x.at4(bi, ch, i, j);
                            }
                        }
                    }
                    let m = s / T::from_f64(n as f64);
                    let mut v = T::zero();
                    for bi in 0..b {
                        for i in 0..h {
                            for j in 0..w {
                                let d = x.at4(bi, ch, i, j) - m;
                                v += d * d;
                            }
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v / T::from_f64(n as f64);
                }
                // Update running statistics.
                let momentum = T::from_f64(BATCHNORM_MOMENTUM);
                let inv_m = T::one() - momentum;
                for ch in 0..c {
                    self.running_mean.data_mut()[ch] =
                        momentum * self.running_mean.data()[ch] + inv_m * mean[ch];
                    self.running_var.data_mut()[ch] =
                        momentum * self.running_var.data()[ch] + inv_m * var[ch];
                }
                self.stats_ready = true;
                (mean, var)
            }
            Mode::Infer => {
                if !self.stats_ready {
                    return Err(Error::InvalidState(
                        "batchnorm infer mode before any train step or checkpoint load".into(),
                    ));
                }
                (
                    self.running_mean.data().to_vec(),
                    self.running_var.data().to_vec(),
                )
            }
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut normalized = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        for bi in 0..b {
            for ch in 0..c {
                let g = self.gamma.data()[ch];
                let be = self.beta.data()[ch];
                for i in 0..h {
                    for j in 0..w {
                        let xh = (x.at4(bi, ch, i, j) - mean[ch]) * inv_std[ch];
                        normalized.set4(bi, ch, i, j, xh);
                        out.set4(bi, ch, i, j, g * xh + be);
                    }
                }
            }
        }
        self.cache = Some(BnCache {
            normalized,
            inv_std,
            mode,
            count: n,
        });
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>> {
        let cache = match self.cache.as_ref() {
            Some(c) => c,
            None => return state_error("batchnorm2d"),
        };
        if upstream.shape() != cache.normalized.shape() {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm2d backward: upstream {:?} vs cached {:?}",
                upstream.shape(),
                cache.normalized.shape()
            )));
        }
        let shape = cache.normalized.shape();
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let n = T::from_f64(cache.count as f64);

        let mut dgamma = Tensor::zeros(&[c]);
        let mut dbeta = Tensor::zeros(&[c]);
        let mut dx = Tensor::zeros(shape);

        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for bi in 0..b {
                for i in 0..h {
                    for j in 0..w {
                        let g = upstream.at4(bi, ch, i, j);
                        sum_g += g;
                        sum_gx += g * cache.normalized.at4(bi, ch, i, j);
                    }
                }
            }
            dgamma.data_mut()[ch] = sum_gx;
            dbeta.data_mut()[ch] = sum_g;

            let gamma = self.gamma.data()[ch];
            let scale = gamma * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let mean_g = sum_g / n;
                    let mean_gx = sum_gx / n;
                    for bi in 0..b {
                        for i in 0..h {
                            for j in 0..w {
                                let g = upstream.at4(bi, ch, i, j);
                                let xh = cache.normalized.at4(bi, ch, i, j);
                                dx.set4(bi, ch, i, j, scale * (g - mean_g - xh * mean_gx));
                            }
                        }
                    }
                }
                // Running stats are constants at inference: the map is affine.
                Mode::Infer => {
                    for bi in 0..b {
                        for i in 0..h {
                            for j in 0..w {
                                dx.set4(bi, ch, i, j, scale * upstream.at4(bi, ch, i, j));
                            }
                        }
                    }
                }
            }
        }
        Ok(GradBundle {
            grads: vec![("gamma", dgamma), ("beta", dbeta)],
            input_grad: dx,
        })
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    fn state(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }

    fn mark_state_loaded(&mut self) {
        self.stats_ready = true;
    }
}

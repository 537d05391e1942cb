//! 2-D convolution (cross-correlation) with zero same-padding, lowered to
//! matmul through im2col.

use rand_chacha::ChaCha8Rng;

use super::{state_error, GradBundle, Layer, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{col2im, crop_border, im2col, matmul, pad_same, Scalar, Shape2d, Tensor};

struct ConvCache<T> {
    /// Per-sample im2col matrices of the padded input.
    cols: Vec<Tensor<T>>,
    input_spatial: Shape2d,
    batch: usize,
}

/// Convolution layer. Weight shape `(out_ch, in_ch, kh, kw)`, bias `(out_ch)`.
/// Spatial dimensions are preserved (zero same-padding), stride is 1.
pub struct Conv2d<T> {
    weight: Tensor<T>,
    bias: Tensor<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: Shape2d,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialized layer; the model builder overwrites the weights.
    pub fn new(in_channels: usize, out_channels: usize, kernel: Shape2d) -> Result<Self> {
        if kernel.height % 2 == 0 || kernel.width % 2 == 0 {
            return Err(Error::UnsupportedKernel(format!(
                "conv2d requires odd kernel sides, got {kernel}"
            )));
        }
        Ok(Conv2d {
            weight: Tensor::zeros(&[out_channels, in_channels, kernel.height, kernel.width]),
            bias: Tensor::zeros(&[out_channels]),
            in_channels,
            out_channels,
            kernel,
            cache: None,
        })
    }

    pub fn with_params(
        in_channels: usize,
        out_channels: usize,
        kernel: Shape2d,
        weight: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self> {
        let mut layer = Self::new(in_channels, out_channels, kernel)?;
        if weight.shape() != layer.weight.shape() || bias.shape() != layer.bias.shape() {
            return Err(Error::ShapeMismatch(format!(
                "conv2d params: expected weight {:?} / bias {:?}, got {:?} / {:?}",
                layer.weight.shape(),
                layer.bias.shape(),
                weight.shape(),
                bias.shape()
            )));
        }
        layer.weight = weight;
        layer.bias = bias;
        Ok(layer)
    }

    pub fn kernel(&self) -> Shape2d {
        self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.height * self.kernel.width
    }

    /// Weights viewed as a `(out_ch, in_ch*kh*kw)` matrix: row-major layout
    /// makes this a plain reshape.
    fn weight_matrix(&self) -> Tensor<T> {
        self.weight
            .reshape(&[self.out_channels, self.fan_in()])
            .expect("weight reshape is exact")
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv2d
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        if x.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects (batch, channel, h, w), got {:?}",
                x.shape()
            )));
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects {} input channels, got {} (input {:?})",
                self.in_channels,
                c,
                x.shape()
            )));
        }

        let wmat = self.weight_matrix();
        let mut out = Tensor::zeros(&[b, self.out_channels, h, w]);
        let mut cols_cache = Vec::with_capacity(b);
        for bi in 0..b {
            let sample = x.batch_item(bi);
            let padded = pad_same(&sample, self.kernel)?;
            let cols = im2col(&padded, self.kernel, 1)?;
            let mut y = matmul(&wmat, &cols)?; // (out_ch, h*w)
            for f in 0..self.out_channels {
                let bv = self.bias.data()[f];
                for v in &mut y.data_mut()[f * h * w..(f + 1) * h * w] {
                    *v += bv;
                }
            }
            out.set_batch_item(bi, &y.reshape(&[self.out_channels, h, w])?);
            cols_cache.push(cols);
        }
        self.cache = Some(ConvCache {
            cols: cols_cache,
            input_spatial: Shape2d { height: h, width: w },
            batch: b,
        });
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>> {
        let cache = match self.cache.as_ref() {
            Some(c) => c,
            None => return state_error("conv2d"),
        };
        let (h, w) = (cache.input_spatial.height, cache.input_spatial.width);
        if upstream.shape() != [cache.batch, self.out_channels, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d backward: upstream {:?} does not match forward output {:?}",
                upstream.shape(),
                [cache.batch, self.out_channels, h, w]
            )));
        }

        let (ph, pw) = ((self.kernel.height - 1) / 2, (self.kernel.width - 1) / 2);
        let wmat = self.weight_matrix();
        let mut dw = Tensor::zeros(&[self.out_channels, self.fan_in()]);
        let mut db = Tensor::zeros(&[self.out_channels]);
        let mut dx = Tensor::zeros(&[cache.batch, self.in_channels, h, w]);

        for bi in 0..cache.batch {
            let up = upstream
                .batch_item(bi)
                .reshape(&[self.out_channels, h * w])?;
            // dW += up . colsᵀ
            let cols = &cache.cols[bi];
            let cols_t = transpose(cols);
            dw = dw.add(&matmul(&up, &cols_t)?)?;
            // db += sum of upstream over space
            for f in 0..self.out_channels {
                let mut s = T::zero();
                for &v in &up.data()[f * h * w..(f + 1) * h * w] {
                    s += v;
                }
                db.data_mut()[f] += s;
            }
            // dX_padded = Wᵀ . up, scattered back through im2col.
            let wt = transpose(&wmat);
            let dcols = matmul(&wt, &up)?;
            let dpadded = col2im(
                &dcols,
                self.in_channels,
                h + 2 * ph,
                w + 2 * pw,
                self.kernel,
                1,
            )?;
            let dsample = crop_border(&dpadded, ph, pw)?;
            dx.set_batch_item(bi, &dsample);
        }

        let dw = dw.reshape(self.weight.shape())?;
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

fn transpose<T: Scalar>(m: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    Tensor::from_fn(&[c, r], |i| m.at2(i % r, i / r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn k3() -> Shape2d {
        Shape2d::new(3, 3).unwrap()
    }

    /// Direct nested-loop cross-correlation with zero same-padding;
    /// independent of the im2col path.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (batch, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
        let mut out = Tensor::zeros(&[batch, cout, h, wd]);
        for bi in 0..batch {
            for f in 0..cout {
                for oy in 0..h {
                    for ox in 0..wd {
                        let mut acc = b.data()[f];
                        for c in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = oy + ky;
                                    let ix = ox + kx;
                                    if iy < ph || ix < pw || iy - ph >= h || ix - pw >= wd {
                                        continue;
                                    }
                                    acc += w.at4(f, c, ky, kx) * x.at4(bi, c, iy - ph, ix - pw);
                                }
                            }
                        }
                        out.set4(bi, f, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        w.set4(0, 0, 1, 1, 1.0);
        let mut conv =
            Conv2d::with_params(1, 1, k3(), w, Tensor::zeros(&[1])).unwrap();
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| (i as f64) * 0.3 - 2.0);
        let y = conv.forward(&x, Mode::Infer, &mut rng()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_ones_input() {
        let w = Tensor::<f64>::filled(&[1, 1, 3, 3], 1.0);
        let mut conv =
            Conv2d::with_params(1, 1, k3(), w, Tensor::zeros(&[1])).unwrap();
        let x = Tensor::<f64>::filled(&[1, 1, 3, 3], 1.0);
        let y = conv.forward(&x, Mode::Infer, &mut rng()).unwrap();
        // Valid neighbours: center 9, edges 6, corners 4.
        assert_eq!(y.at4(0, 0, 1, 1), 9.0);
        assert_eq!(y.at4(0, 0, 0, 1), 6.0);
        assert_eq!(y.at4(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn zero_input_passes_bias_through() {
        let mut conv = Conv2d::new(2, 3, k3()).unwrap();
        conv.params_mut()[1].1.data_mut().fill(2.0);
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let y = conv.forward(&x, Mode::Infer, &mut rng()).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut conv = Conv2d::<f64>::new(3, 4, k3()).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        assert!(matches!(
            conv.forward(&x, Mode::Infer, &mut rng()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 5, 5], |i| ((i * 31 % 17) as f64 - 8.0) / 5.0);
        let w = Tensor::<f64>::from_fn(&[3, 2, 3, 3], |i| ((i * 7 % 13) as f64 - 6.0) / 7.0);
        let b = Tensor::<f64>::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let mut conv = Conv2d::with_params(2, 3, k3(), w.clone(), b.clone()).unwrap();
        let got = conv.forward(&x, Mode::Infer, &mut rng()).unwrap();
        let want = naive_conv(&x, &w, &b);
        for (g, e) in got.data().iter().zip(want.data()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut conv = Conv2d::<f64>::new(1, 1, k3()).unwrap();
        let up = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            conv.backward(&up),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut conv = Conv2d::<f64>::new(1, 2, k3()).unwrap();
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        conv.forward(&x, Mode::Train, &mut rng()).unwrap();
        let bundle = conv.backward(&Tensor::zeros(&[1, 2, 4, 4])).unwrap();
        for (_, g) in &bundle.grads {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
        assert!(bundle.input_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_sums_upstream() {
        // Upstream of ones on (b, 1, h, w) gives db = b*h*w.
        let mut conv = Conv2d::<f64>::new(1, 1, k3()).unwrap();
        let x = Tensor::<f64>::from_fn(&[3, 1, 4, 5], |i| (i as f64).cos());
        conv.forward(&x, Mode::Train, &mut rng()).unwrap();
        let bundle = conv.backward(&Tensor::filled(&[3, 1, 4, 5], 1.0)).unwrap();
        assert_eq!(bundle.grads[1].1.data()[0], 60.0);
    }
}

//! 2x2 max pooling with stride 2.

use rand_chacha::ChaCha8Rng;

use super::{state_error, GradBundle, Layer, LayerKind, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

struct PoolCache {
    in_shape: Vec<usize>,
    padded_hw: (usize, usize),
    /// Flat index (within the padded sample) of the argmax per output cell.
    argmax: Vec<usize>,
}

/// 2x2 max pooling, stride 2. Backward routes each upstream value to the
/// argmax position (first occurrence in row-major order on ties).
///
/// Plain pooling rejects odd spatial dimensions; the model builder enables
/// `pad_odd`, which zero-pads one row/column at the bottom/right first so
/// any input size works (224 -> 112 -> ... -> 7 -> 4).
pub struct MaxPool2x2 {
    pad_odd: bool,
    cache: Option<PoolCache>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        MaxPool2x2 {
            pad_odd: false,
            cache: None,
        }
    }

    pub fn with_pad_odd() -> Self {
        MaxPool2x2 {
            pad_odd: true,
            cache: None,
        }
    }
}

impl Default for MaxPool2x2 {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for MaxPool2x2 {
    fn kind(&self) -> LayerKind {
        LayerKind::MaxPool2x2
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode, _rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
        if x.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "maxpool2x2 expects (batch, channel, h, w), got {:?}",
                x.shape()
            )));
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if !self.pad_odd && (h % 2 != 0 || w % 2 != 0) {
            return Err(Error::ShapeMismatch(format!(
                "maxpool2x2 requires even spatial dims, got {h}x{w}"
            )));
        }
        let ph = h + h % 2;
        let pw = w + w % 2;
        let (oh, ow) = (ph / 2, pw / 2);

        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        let mut argmax = vec![0usize; b * c * oh * ow];
        let mut oi = 0usize;
        for bi in 0..b {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0usize;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let iy = oy * 2 + dy;
                                let ix = ox * 2 + dx;
                                // Zero-padded cell (only reachable with pad_odd).
                                let v = if iy >= h || ix >= w {
                                    T::zero()
                                } else {
                                    x.at4(bi, ch, iy, ix)
                                };
                                // Strict > keeps the first occurrence on ties.
                                if v > best {
                                    best = v;
                                    best_idx = (iy * pw + ix) + (bi * c + ch) * ph * pw;
                                }
                            }
                        }
                        out.set4(bi, ch, oy, ox, best);
                        argmax[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        }
        self.cache = Some(PoolCache {
            in_shape: x.shape().to_vec(),
            padded_hw: (ph, pw),
            argmax,
        });
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<GradBundle<T>> {
        let cache = match self.cache.as_ref() {
            Some(c) => c,
            None => return state_error("maxpool2x2"),
        };
        let (b, c, h, w) = (
            cache.in_shape[0],
            cache.in_shape[1],
            cache.in_shape[2],
            cache.in_shape[3],
        );
        let (ph, pw) = cache.padded_hw;
        if upstream.shape() != [b, c, ph / 2, pw / 2] {
            return Err(Error::ShapeMismatch(format!(
                "maxpool2x2 backward: upstream {:?} does not match output {:?}",
                upstream.shape(),
                [b, c, ph / 2, pw / 2]
            )));
        }
        let mut dx = Tensor::zeros(&cache.in_shape);
        for (ui, &flat) in cache.argmax.iter().enumerate() {
            let plane = flat / (ph * pw);
            let rem = flat % (ph * pw);
            let (iy, ix) = (rem / pw, rem % pw);
            if iy >= h || ix >= w {
                continue; // gradient into the zero pad is discarded
            }
            let idx = (plane * h + iy) * w + ix;
            dx.data_mut()[idx] += upstream.data()[ui];
        }
        Ok(GradBundle::leaf(dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn constant_input_halves_size() {
        let mut pool = MaxPool2x2::new();
        let x = Tensor::<f64>::filled(&[2, 3, 4, 6], 1.5);
        let y = pool.forward(&x, Mode::Infer, &mut rng()).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn window_max_and_backward_routing() {
        let mut pool = MaxPool2x2::new();
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pool.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let bundle = pool.backward(&Tensor::filled(&[1, 1, 1, 1], 7.0)).unwrap();
        assert_eq!(bundle.input_grad.data(), &[0.0, 0.0, 0.0, 7.0]);
    }

    #[test]
    fn tie_break_is_first_occurrence() {
        let mut pool = MaxPool2x2::new();
        let x = Tensor::<f64>::filled(&[1, 1, 2, 2], 5.0);
        pool.forward(&x, Mode::Train, &mut rng()).unwrap();
        let bundle = pool.backward(&Tensor::filled(&[1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(bundle.input_grad.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_dims_rejected_without_pad() {
        let mut pool = MaxPool2x2::new();
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(
            <MaxPool2x2 as Layer<f64>>::forward(&mut pool, &x, Mode::Infer, &mut rng()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pad_odd_ceils_output_size() {
        let mut pool = MaxPool2x2::with_pad_odd();
        let x = Tensor::<f64>::filled(&[1, 1, 7, 7], 2.0);
        let y = pool.forward(&x, Mode::Infer, &mut rng()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        // Padded cells are zero, so edge windows still pick the real 2.0.
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn backward_conserves_mass_on_even_input() {
        let mut pool = MaxPool2x2::new();
        let x = Tensor::<f64>::from_fn(&[2, 2, 4, 4], |i| ((i * 37 % 64) as f64) / 7.0);
        pool.forward(&x, Mode::Train, &mut rng()).unwrap();
        let up = Tensor::<f64>::from_fn(&[2, 2, 2, 2], |i| (i as f64) - 4.0);
        let bundle = pool.backward(&up).unwrap();
        assert!((bundle.input_grad.sum() - up.sum()).abs() < 1e-12);
    }
}

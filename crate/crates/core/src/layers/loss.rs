//! Binary and categorical cross entropy on probabilities.
//!
//! Probabilities are clamped to `[1e-7, 1 - 1e-7]` before the log so a
//! saturated prediction cannot produce an infinite loss; the clamp has zero
//! gradient outside its bounds, which keeps finite-difference checks exact.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Binary cross entropy; predictions `(batch, 1)`, targets in {0, 1}.
    Bce,
    /// Categorical cross entropy; predictions `(batch, k)` probability rows,
    /// targets one-hot rows.
    Cce,
}

/// Mean loss over the batch and the gradient with respect to `pred`.
pub fn loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    kind: LossKind,
) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "loss: pred {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "loss expects (batch, outputs), got {:?}",
            pred.shape()
        )));
    }
    let (b, k) = (pred.shape()[0], pred.shape()[1]);
    let lo = T::from_f64(PROB_CLAMP);
    let hi = T::one() - lo;
    let inv_b = T::one() / T::from_f64(b as f64);

    match kind {
        LossKind::Bce => {
            if k != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "bce expects one probability per sample, got {:?}",
                    pred.shape()
                )));
            }
            for &y in target.data() {
                if y != T::zero() && y != T::one() {
                    return Err(Error::InvalidArgument(format!(
                        "bce target must be 0 or 1, got {y}"
                    )));
                }
            }
            let mut total = T::zero();
            let mut grad = Tensor::zeros(pred.shape());
            for i in 0..b {
                let p = pred.data()[i];
                let y = target.data()[i];
                let pc = p.max(lo).min(hi);
                total += -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
                // d/dp of -[y ln p + (1-y) ln(1-p)], zero outside the clamp.
                let g = if p < lo || p > hi {
                    T::zero()
                } else {
                    -y / pc + (T::one() - y) / (T::one() - pc)
                };
                grad.data_mut()[i] = g * inv_b;
            }
            Ok((total * inv_b, grad))
        }
        LossKind::Cce => {
            for bi in 0..b {
                let row = &target.data()[bi * k..(bi + 1) * k];
                let mut ones = 0usize;
                for &y in row {
                    if y == T::one() {
                        ones += 1;
                    } else if y != T::zero() {
                        return Err(Error::InvalidArgument(format!(
                            "cce target rows must be one-hot, found {y}"
                        )));
                    }
                }
                if ones != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "cce target row {bi} has {ones} ones, expected exactly 1"
                    )));
                }
            }
            let mut total = T::zero();
            let mut grad = Tensor::zeros(pred.shape());
            for i in 0..b * k {
                let y = target.data()[i];
                if y == T::zero() {
                    continue;
                }
                let p = pred.data()[i];
                let pc = p.max(lo).min(hi);
                total += -pc.ln();
                if p >= lo && p <= hi {
                    grad.data_mut()[i] = -inv_b / pc;
                }
            }
            Ok((total * inv_b, grad))
        }
    }
}

//! Shape-correct primitive math: matmul, padding, im2col lowering,
//! bilinear resize and reductions.
//!
//! Determinism contract: every op computes each output element with a
//! sequential inner loop, so results are bitwise identical run-to-run for a
//! fixed input regardless of the rayon thread count.

use rayon::prelude::*;

use super::{Scalar, Shape2d, Tensor};
use crate::error::{Error, Result};

/// Below this many multiply-adds a parallel matmul is pure overhead.
const PAR_MATMUL_THRESHOLD: usize = 1 << 16;

/// `c[i][j] = sum_p a[i][p] * b[p][j]` for `a: m x k`, `b: k x n`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul requires rank-2 tensors, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }

    let mut out = vec![T::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    let row = |i: usize, out_row: &mut [T]| {
        let arow = &ad[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * n * k >= PAR_MATMUL_THRESHOLD {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| row(i, out_row));
    } else {
        for (i, out_row) in out.chunks_mut(n).enumerate() {
            row(i, out_row);
        }
    }
    Tensor::new(&[m, n], out)
}

/// Zero-pad a `(c, h, w)` tensor so a subsequent valid convolution with
/// `kernel` preserves the spatial size. Kernel sides must be odd.
pub fn pad_same<T: Scalar>(x: &Tensor<T>, kernel: Shape2d) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "pad_same requires a (c, h, w) tensor, got {:?}",
            x.shape()
        )));
    }
    if kernel.height % 2 == 0 || kernel.width % 2 == 0 {
        return Err(Error::UnsupportedKernel(format!(
            "pad_same requires odd kernel sides, got {kernel}"
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ph, pw) = ((kernel.height - 1) / 2, (kernel.width - 1) / 2);
    let (oh, ow) = (h + 2 * ph, w + 2 * pw);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for i in 0..h {
            let src = (ch * h + i) * w;
            let dst = (ch * oh + i + ph) * ow + pw;
            out.data_mut()[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
        }
    }
    Ok(out)
}

/// Undo [`pad_same`]: crop `border` rows/cols from every side of each channel.
pub fn crop_border<T: Scalar>(x: &Tensor<T>, bh: usize, bw: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "crop_border requires a (c, h, w) tensor, got {:?}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if 2 * bh >= h || 2 * bw >= w {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {bh}x{bw} border from {h}x{w}"
        )));
    }
    let (oh, ow) = (h - 2 * bh, w - 2 * bw);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for i in 0..oh {
            let src = (ch * h + i + bh) * w + bw;
            let dst = (ch * oh + i) * ow;
            out.data_mut()[dst..dst + ow].copy_from_slice(&x.data()[src..src + ow]);
        }
    }
    Ok(out)
}

fn im2col_dims(h: usize, w: usize, kernel: Shape2d, stride: usize) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::InvalidArgument("im2col stride must be >= 1".into()));
    }
    if h < kernel.height || w < kernel.width {
        return Err(Error::ShapeMismatch(format!(
            "im2col input {h}x{w} smaller than kernel {kernel}"
        )));
    }
    if (h - kernel.height) % stride != 0 || (w - kernel.width) % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "im2col span {h}x{w} minus kernel {kernel} not divisible by stride {stride}"
        )));
    }
    Ok(((h - kernel.height) / stride + 1, (w - kernel.width) / stride + 1))
}

/// Unroll receptive fields of a (pre-padded) `(c, h, w)` tensor into a
/// `(c*kh*kw) x (oh*ow)` matrix: column `j` is the receptive field of output
/// position `j`, so a convolution becomes `matmul(weights_as_rows, cols)`.
pub fn im2col<T: Scalar>(x: &Tensor<T>, kernel: Shape2d, stride: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "im2col requires a (c, h, w) tensor, got {:?}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = im2col_dims(h, w, kernel, stride)?;
    let (kh, kw) = (kernel.height, kernel.width);
    let cols = oh * ow;
    let mut out = vec![T::zero(); c * kh * kw * cols];
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    let src = (ch * h + iy) * w + kx;
                    for ox in 0..ow {
                        dst[oy * ow + ox] = x.data()[src + ox * stride];
                    }
                }
            }
        }
    }
    Tensor::new(&[c * kh * kw, cols], out)
}

/// Adjoint of [`im2col`]: scatter-add a `(c*kh*kw) x (oh*ow)` matrix back
/// into a `(c, h, w)` tensor. Used for input gradients of the conv layer.
pub fn col2im<T: Scalar>(
    cols: &Tensor<T>,
    c: usize,
    h: usize,
    w: usize,
    kernel: Shape2d,
    stride: usize,
) -> Result<Tensor<T>> {
    let (oh, ow) = im2col_dims(h, w, kernel, stride)?;
    let (kh, kw) = (kernel.height, kernel.width);
    if cols.shape() != [c * kh * kw, oh * ow] {
        return Err(Error::ShapeMismatch(format!(
            "col2im expected {:?}, got {:?}",
            [c * kh * kw, oh * ow],
            cols.shape()
        )));
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let src = &cols.data()[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    let dst = (ch * h + iy) * w + kx;
                    for ox in 0..ow {
                        out.data_mut()[dst + ox * stride] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear interpolation of a `(c, h, w)` tensor to `(c, out.h, out.w)`.
///
/// Pixel-center (half-pixel) convention with corner alignment disabled:
/// source coordinate `s = (d + 0.5) * in/out - 0.5`, clamped to the valid
/// range. Constant images map to constant images and `out == in` is the
/// identity.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out: Shape2d) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "bilinear_resize requires a (c, h, w) tensor, got {:?}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (out.height, out.width);

    // Precompute per-axis sample positions and weights.
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5)
                    .clamp(0.0, (n_in - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ys = axis(h, oh);
    let xs = axis(w, ow);

    let mut res = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let v00 = x.at3(ch, y0, x0).to_f64();
                let v01 = x.at3(ch, y0, x1).to_f64();
                let v10 = x.at3(ch, y1, x0).to_f64();
                let v11 = x.at3(ch, y1, x1).to_f64();
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                res.set3(ch, oy, ox, T::from_f64(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Ok(res)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Reduce `x` over `axes`; reduced axes are removed from the shape (a full
/// reduction yields shape `[1]`).
pub fn reduce<T: Scalar>(x: &Tensor<T>, kind: ReduceKind, axes: &[usize]) -> Result<Tensor<T>> {
    if axes.is_empty() {
        return Err(Error::InvalidArgument(
            "reduce requires at least one axis".into(),
        ));
    }
    let rank = x.rank();
    let mut reduced = vec![false; rank];
    for &ax in axes {
        if ax >= rank {
            return Err(Error::InvalidArgument(format!(
                "reduce axis {ax} out of range for rank {rank}"
            )));
        }
        if reduced[ax] {
            return Err(Error::InvalidArgument(format!("duplicate reduce axis {ax}")));
        }
        reduced[ax] = true;
    }

    let out_shape: Vec<usize> = x
        .shape()
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    let out_shape = if out_shape.is_empty() {
        vec![1]
    } else {
        out_shape
    };
    let out_len: usize = out_shape.iter().product();

    let init = match kind {
        ReduceKind::Max => T::neg_infinity(),
        _ => T::zero(),
    };
    let mut acc = vec![init; out_len];

    // Strides of the output laid over the kept axes of the input.
    let mut kept_stride = vec![0usize; rank];
    {
        let mut s = 1usize;
        for ax in (0..rank).rev() {
            if !reduced[ax] {
                kept_stride[ax] = s;
                s *= x.shape()[ax];
            }
        }
    }

    let mut idx = vec![0usize; rank];
    for &v in x.data() {
        let mut out_idx = 0usize;
        for ax in 0..rank {
            out_idx += idx[ax] * kept_stride[ax];
        }
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => acc[out_idx] += v,
            ReduceKind::Max => {
                if v > acc[out_idx] {
                    acc[out_idx] = v;
                }
            }
        }
        // Advance the multi-index (row-major).
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < x.shape()[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }

    if kind == ReduceKind::Mean {
        let count: usize = x
            .shape()
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();
        let inv = T::one() / T::from_f64(count as f64);
        for a in &mut acc {
            *a *= inv;
        }
    }
    Tensor::new(&out_shape, acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(&[rows.len(), rows[0].len()], data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let i3 = Tensor::<f64>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let x = Tensor::<f64>::from_fn(&[3, 3], |i| (i * i) as f64 - 3.0);
        assert_eq!(matmul(&i3, &x).unwrap(), x);
    }

    #[test]
    fn matmul_hand_expansion() {
        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t2(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, t2(&[&[2.0, 1.0], &[4.0, 3.0]]));
    }

    #[test]
    fn matmul_annihilator() {
        let z = Tensor::<f64>::zeros(&[2, 3]);
        let x = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64 + 1.0);
        let c = matmul(&z, &x).unwrap();
        assert_eq!(c, Tensor::<f64>::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn pad_same_single_pixel() {
        let x = Tensor::<f64>::new(&[1, 1, 1], vec![5.0]).unwrap();
        let p = pad_same(&x, Shape2d::new(3, 3).unwrap()).unwrap();
        assert_eq!(p.shape(), &[1, 3, 3]);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == 1 && j == 1 { 5.0 } else { 0.0 };
                assert_eq!(p.at3(0, i, j), expect);
            }
        }
    }

    #[test]
    fn pad_same_ones_interior() {
        let x = Tensor::<f64>::filled(&[1, 3, 3], 1.0);
        let p = pad_same(&x, Shape2d::new(3, 3).unwrap()).unwrap();
        assert_eq!(p.shape(), &[1, 5, 5]);
        assert_eq!(p.sum(), 9.0);
        assert_eq!(p.at3(0, 2, 2), 1.0);
        assert_eq!(p.at3(0, 0, 0), 0.0);
    }

    #[test]
    fn pad_then_crop_round_trip() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64 * 0.5 - 3.0);
        let p = pad_same(&x, Shape2d::new(3, 3).unwrap()).unwrap();
        assert_eq!(crop_border(&p, 1, 1).unwrap(), x);
    }

    #[test]
    fn pad_same_rejects_even_kernel() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2]);
        assert!(matches!(
            pad_same(&x, Shape2d::new(2, 3).unwrap()),
            Err(Error::UnsupportedKernel(_))
        ));
    }

    #[test]
    fn im2col_single_window_is_flat_input() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 3], |i| i as f64);
        let cols = im2col(&x, Shape2d::new(3, 3).unwrap(), 1).unwrap();
        assert_eq!(cols.shape(), &[9, 1]);
        assert_eq!(cols.data(), x.data());
    }

    #[test]
    fn im2col_first_column_is_top_left_window() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 4], |i| i as f64);
        let cols = im2col(&x, Shape2d::new(3, 3).unwrap(), 1).unwrap();
        assert_eq!(cols.shape(), &[9, 4]);
        // Top-left 3x3 window of a 4x4 ramp, row-major.
        let expect = [0.0, 1.0, 2.0, 4.0, 5.0, 6.0, 8.0, 9.0, 10.0];
        for (r, &e) in expect.iter().enumerate() {
            assert_eq!(cols.at2(r, 0), e);
        }
    }

    #[test]
    fn im2col_rejects_stride_zero() {
        let x = Tensor::<f64>::zeros(&[1, 3, 3]);
        assert!(matches!(
            im2col(&x, Shape2d::new(3, 3).unwrap(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random-ish tensors.
        let x = Tensor::<f64>::from_fn(&[2, 5, 5], |i| (i as f64 * 0.731).sin());
        let k = Shape2d::new(3, 3).unwrap();
        let cols = im2col(&x, k, 1).unwrap();
        let y = Tensor::<f64>::from_fn(cols.shape(), |i| (i as f64 * 0.377).cos());
        let lhs = cols.mul(&y).unwrap().sum();
        let back = col2im(&y, 2, 5, 5, k, 1).unwrap();
        let rhs = x.mul(&back).unwrap().sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn bilinear_constant_maps_to_constant() {
        let x = Tensor::<f64>::filled(&[2, 3, 5], 7.0);
        let r = bilinear_resize(&x, Shape2d::new(8, 2).unwrap()).unwrap();
        assert_eq!(r.shape(), &[2, 8, 2]);
        assert!(r.data().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn bilinear_replicates_single_pixel() {
        let x = Tensor::<f64>::new(&[1, 1, 1], vec![3.25]).unwrap();
        let r = bilinear_resize(&x, Shape2d::new(4, 7).unwrap()).unwrap();
        assert!(r.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn bilinear_2x2_to_4x4_hand_weights() {
        // Columns [0, 1]; pixel-center sources for 4 outputs over 2 inputs:
        // s = (d + 0.5)/2 - 0.5 -> [-0.25, 0.25, 0.75, 1.25], clamped.
        let x = Tensor::<f64>::new(&[1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = bilinear_resize(&x, Shape2d::new(4, 4).unwrap()).unwrap();
        let expect_row = [0.0, 0.25, 0.75, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (r.at3(0, i, j) - expect_row[j]).abs() < 1e-12,
                    "({i},{j}) = {}",
                    r.at3(0, i, j)
                );
            }
        }
    }

    #[test]
    fn bilinear_idempotent_when_same_size() {
        let x = Tensor::<f64>::from_fn(&[3, 5, 4], |i| (i as f64).sqrt());
        let r = bilinear_resize(&x, Shape2d::new(5, 4).unwrap()).unwrap();
        assert_eq!(r, x);
    }

    #[test]
    fn reduce_mean_of_ones() {
        let x = Tensor::<f64>::filled(&[4, 4], 1.0);
        let r = reduce(&x, ReduceKind::Mean, &[0, 1]).unwrap();
        assert_eq!(r.shape(), &[1]);
        assert_eq!(r.data()[0], 1.0);
    }

    #[test]
    fn reduce_sum_axis0_hand() {
        let x = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let r = reduce(&x, ReduceKind::Sum, &[0]).unwrap();
        assert_eq!(r.shape(), &[2]);
        assert_eq!(r.data(), &[4.0, 6.0]);
    }

    #[test]
    fn reduce_max_single_element() {
        let x = Tensor::<f64>::scalar(-2.5);
        let r = reduce(&x, ReduceKind::Max, &[0]).unwrap();
        assert_eq!(r.data(), &[-2.5]);
    }

    #[test]
    fn reduce_rejects_bad_axes() {
        let x = Tensor::<f64>::zeros(&[2, 2]);
        assert!(reduce(&x, ReduceKind::Sum, &[]).is_err());
        assert!(reduce(&x, ReduceKind::Sum, &[2]).is_err());
        assert!(reduce(&x, ReduceKind::Sum, &[0, 0]).is_err());
    }

    #[test]
    fn matmul_associativity_within_tolerance() {
        let a = Tensor::<f64>::from_fn(&[4, 5], |i| ((i * 37 % 11) as f64 - 5.0) / 3.0);
        let b = Tensor::<f64>::from_fn(&[5, 6], |i| ((i * 13 % 7) as f64 - 3.0) / 2.0);
        let c = Tensor::<f64>::from_fn(&[6, 3], |i| ((i * 29 % 5) as f64 - 2.0) / 4.0);
        let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        for (x, y) in l.data().iter().zip(r.data()) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1.0);
            assert!(rel < 1e-9);
        }
    }
}

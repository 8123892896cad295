//! 2-D cross-correlation with explicit backward pass.
//!
//! Layouts: input NCHW, weights [out_c, in_c, kh, kw], bias [out_c].
//! The forward path lowers each image to a column matrix and runs a
//! small hand-rolled GEMM; the backward path reuses the same lowering.

use super::tensor::Tensor;
use super::NumericsError;

pub fn conv2d_out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

fn check_shapes(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize), NumericsError> {
    let ishape = input.shape();
    let wshape = weights.shape();
    if ishape.len() != 4 {
        return Err(NumericsError::ShapeMismatch {
            context: "conv2d input",
            detail: format!("expected NCHW, got {:?}", ishape),
        });
    }
    if wshape.len() != 4 {
        return Err(NumericsError::ShapeMismatch {
            context: "conv2d weights",
            detail: format!("expected [out_c, in_c, kh, kw], got {:?}", wshape),
        });
    }
    let (n, in_c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (out_c, w_in_c, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    if in_c != w_in_c {
        return Err(NumericsError::ShapeMismatch {
            context: "conv2d channels",
            detail: format!("input has {} channels, weights expect {}", in_c, w_in_c),
        });
    }
    if bias.shape() != [out_c] {
        return Err(NumericsError::ShapeMismatch {
            context: "conv2d bias",
            detail: format!("bias shape {:?}, want [{}]", bias.shape(), out_c),
        });
    }
    if stride == 0 {
        return Err(NumericsError::ShapeMismatch {
            context: "conv2d stride",
            detail: "stride must be positive".into(),
        });
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(NumericsError::ShapeMismatch {
            context: "conv2d kernel",
            detail: format!(
                "kernel {}x{} does not fit padded input {}x{}",
                kh,
                kw,
                h + 2 * padding,
                w + 2 * padding
            ),
        });
    }
    let oh = conv2d_out_size(h, kh, stride, padding);
    let ow = conv2d_out_size(w, kw, stride, padding);
    Ok((n, in_c, h, w, out_c, kh, kw, oh, ow))
}

/// Lowers one image [C,H,W] to a [C*kh*kw, oh*ow] column matrix.
fn im2col(
    img: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let span = oh * ow;
    for c in 0..in_c {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((c * kh + ky) * kw + kx) * span..][..span];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto an image (transpose of im2col).
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    img: &mut [f64],
) {
    let span = oh * ow;
    for c in 0..in_c {
        let plane = &mut img[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((c * kh + ky) * kw + kx) * span..][..span];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NumericsError> {
    let (n, in_c, h, w, out_c, kh, kw, oh, ow) =
        check_shapes(input, weights, bias, stride, padding)?;
    let span = oh * ow;
    let krows = in_c * kh * kw;
    let mut out = Tensor::zeros(&[n, out_c, oh, ow]);
    let mut cols = vec![0.0; krows * span];
    let wdata = weights.data();
    let bdata = bias.data();

    for img in 0..n {
        let src = &input.data()[img * in_c * h * w..(img + 1) * in_c * h * w];
        im2col(src, in_c, h, w, kh, kw, stride, padding, oh, ow, &mut cols);
        let dst = &mut out.data_mut()[img * out_c * span..(img + 1) * out_c * span];
        for co in 0..out_c {
            let orow = &mut dst[co * span..(co + 1) * span];
            orow.iter_mut().for_each(|v| *v = bdata[co]);
            let wrow = &wdata[co * krows..(co + 1) * krows];
            for (k, &wk) in wrow.iter().enumerate() {
                if wk == 0.0 {
                    continue;
                }
                let crow = &cols[k * span..(k + 1) * span];
                for (o, &c) in orow.iter_mut().zip(crow) {
                    *o += wk * c;
                }
            }
        }
    }
    Ok(out)
}

/// Weight and bias gradients only, for layers whose input gradient is
/// never consumed (the image-facing layer).
pub fn conv2d_backward_params(
    input: &Tensor,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor), NumericsError> {
    let ishape = input.shape();
    let gshape = grad_out.shape();
    let (n, in_c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (out_c, oh, ow) = (gshape[1], gshape[2], gshape[3]);
    let (kh, kw) = kernel;
    let span = oh * ow;
    let krows = in_c * kh * kw;
    let mut d_weights = Tensor::zeros(&[out_c, in_c, kh, kw]);
    let mut d_bias = Tensor::zeros(&[out_c]);
    let mut cols = vec![0.0; krows * span];
    for img in 0..n {
        let src = &input.data()[img * in_c * h * w..(img + 1) * in_c * h * w];
        im2col(src, in_c, h, w, kh, kw, stride, padding, oh, ow, &mut cols);
        let gout = &grad_out.data()[img * out_c * span..(img + 1) * out_c * span];
        for co in 0..out_c {
            let grow = &gout[co * span..(co + 1) * span];
            d_bias.data_mut()[co] += grow.iter().sum::<f64>();
            let dwrow = &mut d_weights.data_mut()[co * krows..(co + 1) * krows];
            for (k, dw) in dwrow.iter_mut().enumerate() {
                let crow = &cols[k * span..(k + 1) * span];
                let mut acc = 0.0;
                for (g, c) in grow.iter().zip(crow) {
                    acc += g * c;
                }
                *dw += acc;
            }
        }
    }
    Ok((d_weights, d_bias))
}

/// Gradients of a scalar loss w.r.t. conv2d input, weights and bias given
/// the upstream gradient on the output.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NumericsError> {
    let bias = Tensor::zeros(&[weights.shape()[0]]);
    let (n, in_c, h, w, out_c, kh, kw, oh, ow) =
        check_shapes(input, weights, &bias, stride, padding)?;
    if grad_out.shape() != [n, out_c, oh, ow] {
        return Err(NumericsError::ShapeMismatch {
            context: "conv2d grad_out",
            detail: format!(
                "got {:?}, want {:?}",
                grad_out.shape(),
                [n, out_c, oh, ow]
            ),
        });
    }
    let span = oh * ow;
    let krows = in_c * kh * kw;
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut d_bias = Tensor::zeros(&[out_c]);
    let mut cols = vec![0.0; krows * span];
    let mut dcols = vec![0.0; krows * span];
    let wdata = weights.data();

    for img in 0..n {
        let src = &input.data()[img * in_c * h * w..(img + 1) * in_c * h * w];
        im2col(src, in_c, h, w, kh, kw, stride, padding, oh, ow, &mut cols);
        let gout = &grad_out.data()[img * out_c * span..(img + 1) * out_c * span];

        for co in 0..out_c {
            let grow = &gout[co * span..(co + 1) * span];
            d_bias.data_mut()[co] += grow.iter().sum::<f64>();
            let dwrow = &mut d_weights.data_mut()[co * krows..(co + 1) * krows];
            for (k, dw) in dwrow.iter_mut().enumerate() {
                let crow = &cols[k * span..(k + 1) * span];
                let mut acc = 0.0;
                for (g, c) in grow.iter().zip(crow) {
                    acc += g * c;
                }
                *dw += acc;
            }
        }

        dcols.iter_mut().for_each(|v| *v = 0.0);
        for co in 0..out_c {
            let grow = &gout[co * span..(co + 1) * span];
            let wrow = &wdata[co * krows..(co + 1) * krows];
            for (k, &wk) in wrow.iter().enumerate() {
                if wk == 0.0 {
                    continue;
                }
                let drow = &mut dcols[k * span..(k + 1) * span];
                for (d, &g) in drow.iter_mut().zip(grow) {
                    *d += wk * g;
                }
            }
        }
        let dst = &mut d_input.data_mut()[img * in_c * h * w..(img + 1) * in_c * h * w];
        col2im(&dcols, in_c, h, w, kh, kw, stride, padding, oh, ow, dst);
    }
    Ok((d_input, d_weights, d_bias))
}

/// Stride-1 convolution with periodic (wrap-around) padding and odd
/// kernel size. Test rig for shift-equivariance checks: circular padding
/// makes the op commute exactly with circular shifts of the input.
pub fn conv2d_circular(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, NumericsError> {
    let ishape = input.shape().to_vec();
    let wshape = weights.shape().to_vec();
    if ishape.len() != 4 || wshape.len() != 4 || ishape[1] != wshape[1] {
        return Err(NumericsError::ShapeMismatch {
            context: "conv2d_circular",
            detail: format!("input {:?} vs weights {:?}", ishape, wshape),
        });
    }
    let (n, in_c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (out_c, kh, kw) = (wshape[0], wshape[2], wshape[3]);
    assert!(kh % 2 == 1 && kw % 2 == 1, "circular conv expects odd kernels");
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = Tensor::zeros(&[n, out_c, h, w]);
    for img in 0..n {
        for co in 0..out_c {
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = bias.data()[co];
                    for ci in 0..in_c {
                        for ky in 0..kh {
                            let iy = (oy + h + ky - ph) % h;
                            for kx in 0..kw {
                                let ix = (ox + w + kx - pw) % w;
                                acc += input.at4(img, ci, iy, ix)
                                    * weights.at4(co, ci, ky, kx);
                            }
                        }
                    }
                    out.set4(img, co, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_kernel() {
        let input = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let out = conv2d(&input, &w, &b, 1, 0).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn all_ones_3x3_on_constant_input() {
        let input = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let out = conv2d(&input, &w, &b, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn output_shape_formula_over_random_configs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let h = rng.gen_range(1..=12);
            let w = rng.gen_range(1..=12);
            let k = rng.gen_range(1..=3.min(h).min(w));
            let stride = rng.gen_range(1..=3);
            let pad = rng.gen_range(0..=2);
            let input = Tensor::zeros(&[1, 2, h, w]);
            let weights = Tensor::zeros(&[3, 2, k, k]);
            let bias = Tensor::zeros(&[3]);
            let out = conv2d(&input, &weights, &bias, stride, pad).unwrap();
            assert_eq!(
                out.shape(),
                &[
                    1,
                    3,
                    (h + 2 * pad - k) / stride + 1,
                    (w + 2 * pad - k) / stride + 1
                ]
            );
        }
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let input = Tensor::zeros(&[1, 3, 4, 4]);
        let weights = Tensor::zeros(&[2, 4, 3, 3]);
        let bias = Tensor::zeros(&[2]);
        let err = conv2d(&input, &weights, &bias, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3 channels") && msg.contains("expect"), "{msg}");
    }

    #[test]
    fn circular_conv_commutes_with_circular_shift() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (c, h, w) = (2, 5, 6);
        let input = Tensor::from_vec(
            &[1, c, h, w],
            (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let weights = Tensor::from_vec(
            &[3, c, 3, 3],
            (0..3 * c * 9).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let bias = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();

        let base = conv2d_circular(&input, &weights, &bias).unwrap();

        let (dy, dx) = (2usize, 3usize);
        let mut shifted = Tensor::zeros(&[1, c, h, w]);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    shifted.set4(0, ci, (y + dy) % h, (x + dx) % w, input.at4(0, ci, y, x));
                }
            }
        }
        let out_shifted = conv2d_circular(&shifted, &weights, &bias).unwrap();
        for co in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let a = base.at4(0, co, y, x);
                    let b = out_shifted.at4(0, co, (y + dy) % h, (x + dx) % w);
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

//! Window max pooling over NCHW tensors.

use super::tensor::Tensor;
use super::NumericsError;

fn check(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize), NumericsError> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(NumericsError::ShapeMismatch {
            context: "max_pool2d input",
            detail: format!("expected NCHW, got {:?}", s),
        });
    }
    if window == 0 || stride == 0 || window > s[2] || window > s[3] {
        return Err(NumericsError::ShapeMismatch {
            context: "max_pool2d window",
            detail: format!("window {} stride {} on {}x{} input", window, stride, s[2], s[3]),
        });
    }
    let oh = (s[2] - window) / stride + 1;
    let ow = (s[3] - window) / stride + 1;
    Ok((s[0], s[1], s[2], s[3], oh, ow))
}

pub fn max_pool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor, NumericsError> {
    let (n, c, h, w, oh, ow) = check(input, window, stride)?;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for img in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..window {
                        for kx in 0..window {
                            let v = input.at4(img, ch, oy * stride + ky, ox * stride + kx);
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out.set4(img, ch, oy, ox, best);
                }
            }
        }
    }
    let _ = (h, w);
    Ok(out)
}

/// Routes each output gradient to the first-scanned argmax cell of its
/// window (row-major scan), mirroring the forward tie-break.
pub fn max_pool2d_backward(
    input: &Tensor,
    window: usize,
    stride: usize,
    grad_out: &Tensor,
) -> Result<Tensor, NumericsError> {
    let (n, c, _h, _w, oh, ow) = check(input, window, stride)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(NumericsError::ShapeMismatch {
            context: "max_pool2d grad_out",
            detail: format!("got {:?}, want {:?}", grad_out.shape(), [n, c, oh, ow]),
        });
    }
    let mut d_input = Tensor::zeros(input.shape());
    for img in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let (mut by, mut bx) = (0, 0);
                    for ky in 0..window {
                        for kx in 0..window {
                            let v = input.at4(img, ch, oy * stride + ky, ox * stride + kx);
                            if v > best {
                                best = v;
                                by = oy * stride + ky;
                                bx = ox * stride + kx;
                            }
                        }
                    }
                    let g = grad_out.at4(img, ch, oy, ox);
                    let cur = d_input.at4(img, ch, by, bx);
                    d_input.set4(img, ch, by, bx, cur + g);
                }
            }
        }
    }
    Ok(d_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_2x2_window() {
        let input = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = max_pool2d(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn backward_routes_to_argmax_only() {
        let input = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gout = Tensor::from_vec(&[1, 1, 1, 1], vec![5.0]).unwrap();
        let din = max_pool2d_backward(&input, 2, 2, &gout).unwrap();
        assert_eq!(din.data(), &[0.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn window_larger_than_input_is_error() {
        let input = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(max_pool2d(&input, 3, 1).is_err());
    }
}

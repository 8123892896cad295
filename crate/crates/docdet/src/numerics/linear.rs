//! Affine map and ReLU, with backward passes.

use super::tensor::Tensor;
use super::NumericsError;

/// Row-wise affine map: input [n, d_in], weights [d_out, d_in],
/// bias [d_out] -> output [n, d_out].
pub fn linear(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    let (n, d_in) = match input.shape() {
        [n, d] => (*n, *d),
        s => {
            return Err(NumericsError::ShapeMismatch {
                context: "linear input",
                detail: format!("expected [rows, d_in], got {:?}", s),
            })
        }
    };
    let (d_out, w_in) = match weights.shape() {
        [o, i] => (*o, *i),
        s => {
            return Err(NumericsError::ShapeMismatch {
                context: "linear weights",
                detail: format!("expected [d_out, d_in], got {:?}", s),
            })
        }
    };
    if w_in != d_in {
        return Err(NumericsError::ShapeMismatch {
            context: "linear inner dim",
            detail: format!("input d_in {} vs weights d_in {}", d_in, w_in),
        });
    }
    if bias.shape() != [d_out] {
        return Err(NumericsError::ShapeMismatch {
            context: "linear bias",
            detail: format!("bias {:?}, want [{}]", bias.shape(), d_out),
        });
    }
    let mut out = Tensor::zeros(&[n, d_out]);
    for r in 0..n {
        let xrow = &input.data()[r * d_in..(r + 1) * d_in];
        let orow = &mut out.data_mut()[r * d_out..(r + 1) * d_out];
        for (o, (wrow, b)) in orow
            .iter_mut()
            .zip(weights.data().chunks_exact(d_in).zip(bias.data()))
        {
            let mut acc = *b;
            for (x, w) in xrow.iter().zip(wrow) {
                acc += x * w;
            }
            *o = acc;
        }
    }
    Ok(out)
}

pub fn linear_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NumericsError> {
    let (n, d_in) = (input.shape()[0], input.shape()[1]);
    let d_out = weights.shape()[0];
    if grad_out.shape() != [n, d_out] {
        return Err(NumericsError::ShapeMismatch {
            context: "linear grad_out",
            detail: format!("got {:?}, want {:?}", grad_out.shape(), [n, d_out]),
        });
    }
    let mut d_input = Tensor::zeros(&[n, d_in]);
    let mut d_weights = Tensor::zeros(&[d_out, d_in]);
    let mut d_bias = Tensor::zeros(&[d_out]);
    for r in 0..n {
        let xrow = &input.data()[r * d_in..(r + 1) * d_in];
        let grow = &grad_out.data()[r * d_out..(r + 1) * d_out];
        for (o, &g) in grow.iter().enumerate() {
            d_bias.data_mut()[o] += g;
            let wrow = &weights.data()[o * d_in..(o + 1) * d_in];
            let dwrow = &mut d_weights.data_mut()[o * d_in..(o + 1) * d_in];
            let dxrow = &mut d_input.data_mut()[r * d_in..(r + 1) * d_in];
            for i in 0..d_in {
                dwrow[i] += g * xrow[i];
                dxrow[i] += g * wrow[i];
            }
        }
    }
    Ok((d_input, d_weights, d_bias))
}

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
    out
}

/// Gradient mask: passes upstream gradient where the input was positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    assert_eq!(input.shape(), grad_out.shape(), "relu shapes must match");
    let mut d = grad_out.clone();
    for (g, &x) in d.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_zero_bias() {
        let input = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let w = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::zeros(&[3]);
        let out = linear(&input, &w, &b).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn three_output_example() {
        // rows of W: (1,0), (0,1), (1,1) so x=(1,2) maps to (1,2,3)
        let input = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[3, 2], vec![1., 0., 0., 1., 1., 1.]).unwrap();
        let b = Tensor::zeros(&[3]);
        let out = linear(&input, &w, &b).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn inner_dim_mismatch_is_error() {
        let input = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 4]);
        let b = Tensor::zeros(&[2]);
        assert!(linear(&input, &w, &b).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let t = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }
}

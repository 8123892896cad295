//! Classification and box-regression losses.

use super::tensor::Tensor;
use super::NumericsError;

/// Numerically stabilized softmax over a 1-D logit vector.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.clone();
    let mut sum = 0.0;
    for v in out.data_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    out.scale_assign(1.0 / sum);
    out
}

/// Negative log-likelihood of `target` under softmax(logits).
/// Returns the loss and the probability vector (needed by the backward).
pub fn softmax_cross_entropy(
    logits: &Tensor,
    target: usize,
) -> Result<(f64, Tensor), NumericsError> {
    if logits.shape().len() != 1 || target >= logits.len() {
        return Err(NumericsError::ShapeMismatch {
            context: "softmax_cross_entropy",
            detail: format!("target {} on logits {:?}", target, logits.shape()),
        });
    }
    let probs = softmax(logits);
    // -log p clipped away from -inf when p underflows to zero.
    let p = probs.data()[target].max(f64::MIN_POSITIVE);
    Ok((-p.ln(), probs))
}

/// d(loss)/d(logits) = softmax - onehot.
pub fn softmax_cross_entropy_backward(probs: &Tensor, target: usize) -> Tensor {
    let mut grad = probs.clone();
    grad.data_mut()[target] -= 1.0;
    grad
}

/// Huber-style loss summed over all elements: 0.5 x^2 inside |x| < 1,
/// |x| - 0.5 outside.
pub fn smooth_l1(x: &Tensor) -> f64 {
    x.data()
        .iter()
        .map(|&v| {
            let a = v.abs();
            if a < 1.0 {
                0.5 * v * v
            } else {
                a - 0.5
            }
        })
        .sum()
}

pub fn smooth_l1_backward(x: &Tensor) -> Tensor {
    let mut g = x.clone();
    for v in g.data_mut() {
        *v = if v.abs() < 1.0 { *v } else { v.signum() };
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_n() {
        let logits = Tensor::zeros(&[3]);
        let (loss, _) = softmax_cross_entropy(&logits, 1).unwrap();
        assert!((loss - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_costs_nothing() {
        let logits = Tensor::from_vec(&[3], vec![0.0, 1000.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, 1).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn probabilities_sum_to_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let n = rng.gen_range(1..=8);
            let logits =
                Tensor::from_vec(&[n], (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect())
                    .unwrap();
            let p = softmax(&logits);
            let sum: f64 = p.data().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradient_is_probs_minus_onehot() {
        let logits = Tensor::from_vec(&[3], vec![0.2, -0.4, 1.1]).unwrap();
        let (_, probs) = softmax_cross_entropy(&logits, 2).unwrap();
        let g = softmax_cross_entropy_backward(&probs, 2);
        assert!((g.data()[0] - probs.data()[0]).abs() < 1e-15);
        assert!((g.data()[2] - (probs.data()[2] - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_reference_points() {
        assert_eq!(smooth_l1(&Tensor::scalar(0.0)), 0.0);
        assert_eq!(smooth_l1(&Tensor::scalar(0.5)), 0.125);
        assert_eq!(smooth_l1(&Tensor::scalar(2.0)), 1.5);
        assert_eq!(smooth_l1(&Tensor::scalar(-2.0)), 1.5);
    }

    #[test]
    fn smooth_l1_sums_elements() {
        let x = Tensor::from_vec(&[3], vec![0.5, -2.0, 0.0]).unwrap();
        assert_eq!(smooth_l1(&x), 0.125 + 1.5);
    }
}

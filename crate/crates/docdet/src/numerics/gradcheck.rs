//! Central finite-difference verification of analytic gradients.

use super::tensor::Tensor;

/// Floor for the relative-error denominator so exactly-zero gradients
/// compare by absolute error instead of dividing by zero.
const REL_FLOOR: f64 = 1e-6;

/// Perturbs every element of `input` by ±epsilon, evaluates the scalar
/// `op` and compares the central difference against `analytic_grad`
/// elementwise. Returns the maximum relative error.
pub fn finite_diff_check<F>(op: F, input: &Tensor, analytic_grad: &Tensor, epsilon: f64) -> f64
where
    F: Fn(&Tensor) -> f64,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    assert_eq!(
        input.shape(),
        analytic_grad.shape(),
        "analytic gradient shape must match input"
    );
    let mut probe = input.clone();
    let mut max_err: f64 = 0.0;
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = op(&probe);
        probe.data_mut()[i] = orig - epsilon;
        let minus = op(&probe);
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = analytic_grad.data()[i];
        let denom = numeric.abs().max(analytic.abs()).max(REL_FLOOR);
        max_err = max_err.max((numeric - analytic).abs() / denom);
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        // f(x) = sum(x^2), grad = 2x
        let x = Tensor::from_vec(&[3], vec![0.5, -1.5, 2.0]).unwrap();
        let mut g = x.clone();
        g.scale_assign(2.0);
        let err = finite_diff_check(|t| t.data().iter().map(|v| v * v).sum(), &x, &g, 1e-4);
        assert!(err < 1e-7, "err {err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap(); // truth is 2x
        let err = finite_diff_check(|t| t.data().iter().map(|v| v * v).sum(), &x, &g, 1e-4);
        assert!(err > 0.1, "err {err}");
    }
}

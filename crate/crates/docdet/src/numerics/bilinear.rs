//! Bilinear sampling on a [C, H, W] feature map with edge clamping.

use super::tensor::Tensor;

/// Corner weights for a sample at (x, y): the four surrounding integer
/// cells and their interpolation coefficients, with coordinates clamped
/// to the feature extent so border samples stay finite.
#[inline]
fn corners(h: usize, w: usize, x: f64, y: f64) -> [(usize, usize, f64); 4] {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    [
        (y0, x0, (1.0 - fy) * (1.0 - fx)),
        (y0, x1, (1.0 - fy) * fx),
        (y1, x0, fy * (1.0 - fx)),
        (y1, x1, fy * fx),
    ]
}

/// Interpolates `feature[channel]` at continuous position (x, y).
pub fn bilinear_sample(feature: &Tensor, channel: usize, x: f64, y: f64) -> f64 {
    let (h, w) = (feature.shape()[1], feature.shape()[2]);
    corners(h, w, x, y)
        .iter()
        .map(|&(cy, cx, wgt)| wgt * feature.at3(channel, cy, cx))
        .sum()
}

/// Accumulates d(sample)/d(feature) * upstream into `grad` (same shape as
/// the feature map).
pub fn bilinear_sample_backward(
    feature_shape: &[usize],
    channel: usize,
    x: f64,
    y: f64,
    upstream: f64,
    grad: &mut Tensor,
) {
    let (h, w) = (feature_shape[1], feature_shape[2]);
    for (cy, cx, wgt) in corners(h, w, x, y) {
        let cur = grad.at3(channel, cy, cx);
        grad.set3(channel, cy, cx, cur + wgt * upstream);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp_feature() -> Tensor {
        Tensor::from_vec(&[1, 2, 2], vec![2.0, 4.0, 6.0, 8.0]).unwrap()
    }

    #[test]
    fn integer_grid_point_is_exact() {
        let f = ramp_feature();
        assert_eq!(bilinear_sample(&f, 0, 0.0, 0.0), 2.0);
        assert_eq!(bilinear_sample(&f, 0, 1.0, 0.0), 4.0);
        assert_eq!(bilinear_sample(&f, 0, 0.0, 1.0), 6.0);
        assert_eq!(bilinear_sample(&f, 0, 1.0, 1.0), 8.0);
    }

    #[test]
    fn midpoint_is_average() {
        let f = ramp_feature();
        assert_eq!(bilinear_sample(&f, 0, 0.5, 0.0), 3.0);
    }

    #[test]
    fn outside_extent_clamps_to_edge() {
        let f = ramp_feature();
        assert_eq!(bilinear_sample(&f, 0, -3.0, -3.0), 2.0);
        assert_eq!(bilinear_sample(&f, 0, 9.0, 9.0), 8.0);
    }

    #[test]
    fn matches_four_corner_formula_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (h, w) = (5, 7);
        let f = Tensor::from_vec(
            &[2, h, w],
            (0..2 * h * w).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        for _ in 0..100 {
            let c = rng.gen_range(0..2);
            let x = rng.gen_range(0.0..(w - 1) as f64);
            let y = rng.gen_range(0.0..(h - 1) as f64);
            let x0 = x.floor() as usize;
            let y0 = y.floor() as usize;
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let expect = f.at3(c, y0, x0) * (1.0 - fx) * (1.0 - fy)
                + f.at3(c, y0, x0 + 1) * fx * (1.0 - fy)
                + f.at3(c, y0 + 1, x0) * (1.0 - fx) * fy
                + f.at3(c, y0 + 1, x0 + 1) * fx * fy;
            let got = bilinear_sample(&f, c, x, y);
            assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");
        }
    }
}

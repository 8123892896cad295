//! Finite-difference verification suites for every differentiable
//! operator and the end-to-end detector loss. The CLI `gradcheck`
//! subcommand runs these; the acceptance tests assert them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::train::{losses_and_grads, RoiSample, RpnSample};
use crate::detector::{BackboneConfig, ConvSpec, DetectorModel, RoiConfig, RoiMode};
use crate::geometry::{encode_delta, AnchorConfig, BBox, LabelSet};
use crate::numerics::{
    bilinear_sample, bilinear_sample_backward, conv2d, conv2d_backward, finite_diff_check, linear,
    linear_backward, max_pool2d, max_pool2d_backward, relu, relu_backward, smooth_l1,
    smooth_l1_backward, softmax_cross_entropy, softmax_cross_entropy_backward, Tensor,
};

/// Maximum relative error allowed for the smooth nonlinear ops.
pub const GRAD_TOLERANCE: f64 = 1e-3;
/// Tighter bound for piecewise-linear ops probed away from their kinks.
pub const LINEAR_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5eed_0000 + tag)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn check_conv2d() -> CheckResult {
    let mut r = rng(1);
    let input = random_tensor(&mut r, &[1, 2, 5, 5], -1.0, 1.0);
    let weights = random_tensor(&mut r, &[3, 2, 3, 3], -0.7, 0.7);
    let bias = random_tensor(&mut r, &[3], -0.3, 0.3);
    let (stride, pad) = (1, 1);
    let out = conv2d(&input, &weights, &bias, stride, pad).unwrap();
    let coef = random_tensor(&mut r, out.shape(), -1.0, 1.0);
    let (d_in, d_w, d_b) = conv2d_backward(&input, &weights, stride, pad, &coef).unwrap();

    let w2 = weights.clone();
    let b2 = bias.clone();
    let c2 = coef.clone();
    let e_in = finite_diff_check(
        move |x| dot(&conv2d(x, &w2, &b2, stride, pad).unwrap(), &c2),
        &input,
        &d_in,
        1e-5,
    );
    let i2 = input.clone();
    let b3 = bias.clone();
    let c3 = coef.clone();
    let e_w = finite_diff_check(
        move |w| dot(&conv2d(&i2, w, &b3, stride, pad).unwrap(), &c3),
        &weights,
        &d_w,
        1e-5,
    );
    let i3 = input.clone();
    let w3 = weights.clone();
    let c4 = coef.clone();
    let e_b = finite_diff_check(
        move |b| dot(&conv2d(&i3, &w3, b, stride, pad).unwrap(), &c4),
        &bias,
        &d_b,
        1e-5,
    );
    CheckResult {
        name: "conv2d",
        max_rel_err: e_in.max(e_w).max(e_b),
        tolerance: GRAD_TOLERANCE,
    }
}

pub fn check_linear() -> CheckResult {
    let mut r = rng(2);
    let input = random_tensor(&mut r, &[2, 4], -1.0, 1.0);
    let weights = random_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let bias = random_tensor(&mut r, &[3], -0.5, 0.5);
    let out = linear(&input, &weights, &bias).unwrap();
    let coef = random_tensor(&mut r, out.shape(), -1.0, 1.0);
    let (d_in, d_w, d_b) = linear_backward(&input, &weights, &coef).unwrap();

    let (w2, b2, c2) = (weights.clone(), bias.clone(), coef.clone());
    let e_in = finite_diff_check(
        move |x| dot(&linear(x, &w2, &b2).unwrap(), &c2),
        &input,
        &d_in,
        1e-3,
    );
    let (i2, b3, c3) = (input.clone(), bias.clone(), coef.clone());
    let e_w = finite_diff_check(
        move |w| dot(&linear(&i2, w, &b3).unwrap(), &c3),
        &weights,
        &d_w,
        1e-3,
    );
    let (i3, w3, c4) = (input.clone(), weights.clone(), coef.clone());
    let e_b = finite_diff_check(
        move |b| dot(&linear(&i3, &w3, b).unwrap(), &c4),
        &bias,
        &d_b,
        1e-3,
    );
    CheckResult {
        name: "linear",
        max_rel_err: e_in.max(e_w).max(e_b),
        tolerance: LINEAR_TOLERANCE,
    }
}

pub fn check_max_pool2d() -> CheckResult {
    let mut r = rng(3);
    // distinct well-separated values keep the argmax stable under probing
    let mut vals: Vec<f64> = (0..72).map(|i| i as f64 * 0.05).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    let input = Tensor::from_vec(&[1, 2, 6, 6], vals).unwrap();
    let out = max_pool2d(&input, 2, 2).unwrap();
    let coef = random_tensor(&mut r, out.shape(), -1.0, 1.0);
    let d_in = max_pool2d_backward(&input, 2, 2, &coef).unwrap();
    let c2 = coef.clone();
    let err = finite_diff_check(
        move |x| dot(&max_pool2d(x, 2, 2).unwrap(), &c2),
        &input,
        &d_in,
        1e-5,
    );
    CheckResult { name: "max_pool2d", max_rel_err: err, tolerance: GRAD_TOLERANCE }
}

pub fn check_relu() -> CheckResult {
    let mut r = rng(4);
    // probe away from the kink at zero
    let data: Vec<f64> = (0..40)
        .map(|_| {
            let m: f64 = r.gen_range(0.05..1.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let input = Tensor::from_vec(&[40], data).unwrap();
    let coef = random_tensor(&mut r, &[40], -1.0, 1.0);
    let d_in = relu_backward(&input, &coef);
    let c2 = coef.clone();
    let err = finite_diff_check(move |x| dot(&relu(x), &c2), &input, &d_in, 1e-3);
    CheckResult { name: "relu", max_rel_err: err, tolerance: LINEAR_TOLERANCE }
}

pub fn check_bilinear_sample() -> CheckResult {
    let mut r = rng(5);
    let feature = random_tensor(&mut r, &[2, 5, 7], -1.0, 1.0);
    // sample points strictly inside cells so the surface is smooth
    let points: Vec<(usize, f64, f64, f64)> = (0..20)
        .map(|_| {
            (
                r.gen_range(0..2),
                r.gen_range(0..6) as f64 + r.gen_range(0.2..0.8),
                r.gen_range(0..4) as f64 + r.gen_range(0.2..0.8),
                r.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let mut analytic = Tensor::zeros(feature.shape());
    for &(c, x, y, w) in &points {
        bilinear_sample_backward(feature.shape(), c, x, y, w, &mut analytic);
    }
    let pts = points.clone();
    let err = finite_diff_check(
        move |f| {
            pts.iter()
                .map(|&(c, x, y, w)| w * bilinear_sample(f, c, x, y))
                .sum()
        },
        &feature,
        &analytic,
        1e-5,
    );
    CheckResult { name: "bilinear_sample", max_rel_err: err, tolerance: GRAD_TOLERANCE }
}

pub fn check_roi_align() -> CheckResult {
    use crate::detector::roi::{roi_align, roi_align_backward};
    let mut r = rng(6);
    let feature = random_tensor(&mut r, &[2, 6, 6], -1.0, 1.0);
    let cfg = RoiConfig { mode: RoiMode::Align, output_size: (3, 3), samples_per_bin: 2 };
    let roi = BBox::new(0.7, 1.3, 4.9, 5.1);
    let out = roi_align(&feature, &roi, &cfg);
    let coef = random_tensor(&mut r, out.shape(), -1.0, 1.0);
    let mut analytic = Tensor::zeros(feature.shape());
    roi_align_backward(&feature, &roi, &cfg, &coef, &mut analytic);
    let c2 = coef.clone();
    let err = finite_diff_check(
        move |f| dot(&roi_align(f, &roi, &cfg), &c2),
        &feature,
        &analytic,
        1e-5,
    );
    CheckResult { name: "roi_align", max_rel_err: err, tolerance: GRAD_TOLERANCE }
}

pub fn check_softmax_cross_entropy() -> CheckResult {
    let mut r = rng(7);
    let logits = random_tensor(&mut r, &[5], -2.0, 2.0);
    let target = 2usize;
    let (_, probs) = softmax_cross_entropy(&logits, target).unwrap();
    let analytic = softmax_cross_entropy_backward(&probs, target);
    let err = finite_diff_check(
        move |l| softmax_cross_entropy(l, target).unwrap().0,
        &logits,
        &analytic,
        1e-5,
    );
    CheckResult { name: "softmax_cross_entropy", max_rel_err: err, tolerance: GRAD_TOLERANCE }
}

pub fn check_smooth_l1() -> CheckResult {
    let mut r = rng(8);
    // stay away from the |x| = 1 transition
    let data: Vec<f64> = (0..30)
        .map(|_| {
            let inner: bool = r.gen_bool(0.5);
            let m: f64 = if inner { r.gen_range(0.0..0.8) } else { r.gen_range(1.2..3.0) };
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = Tensor::from_vec(&[30], data).unwrap();
    let analytic = smooth_l1_backward(&x);
    let err = finite_diff_check(|t| smooth_l1(t), &x, &analytic, 1e-5);
    CheckResult { name: "smooth_l1", max_rel_err: err, tolerance: GRAD_TOLERANCE }
}

/// A 2-conv-layer detector on an 8x8 input with one anchor per cell and
/// two fixed RoIs, exercising the complete backward chain.
pub fn toy_detector() -> (DetectorModel, Tensor, Vec<RpnSample>, Vec<RoiSample>) {
    let backbone = BackboneConfig {
        name: "toy".into(),
        layers: vec![
            ConvSpec { out_channels: 4, kernel: 3, stride: 2, padding: 1 },
            ConvSpec { out_channels: 6, kernel: 3, stride: 2, padding: 1 },
        ],
    };
    let anchors = AnchorConfig::new(vec![4.0], vec![1.0], 4).unwrap();
    let roi_cfg = RoiConfig { mode: RoiMode::Align, output_size: (2, 2), samples_per_bin: 1 };
    let model = DetectorModel::new(backbone, anchors, roi_cfg, LabelSet::new(["a", "b"]), 1234)
        .expect("toy model");

    let mut r = rng(9);
    let x = random_tensor(&mut r, &[3, 8, 8], 0.0, 1.0);
    let gt = BBox::new(1.2, 1.4, 6.3, 6.9);

    // anchor grid is 2x2, one anchor per cell, 4x4 boxes at cell centers
    let anchor00 = BBox::from_center_size(2.0, 2.0, 4.0, 4.0);
    let rpn_samples = vec![
        RpnSample { anchor: 0, row: 0, col: 0, target: Some(encode_delta(&anchor00, &gt).unwrap()) },
        RpnSample { anchor: 0, row: 0, col: 1, target: None },
        RpnSample { anchor: 0, row: 1, col: 0, target: None },
        RpnSample { anchor: 0, row: 1, col: 1, target: None },
    ];
    let fg_box = BBox::new(1.3, 0.9, 6.1, 5.7);
    let roi_samples = vec![
        RoiSample { bbox: fg_box, target: Some((1, encode_delta(&fg_box, &gt).unwrap())) },
        RoiSample { bbox: BBox::new(0.4, 0.6, 4.2, 3.4), target: None },
    ];
    (model, x, rpn_samples, roi_samples)
}

/// Checks the analytic gradient of the full detector loss against
/// central finite differences for every parameter of the toy model.
pub fn check_detector_loss() -> CheckResult {
    let (model, x, rpn_samples, roi_samples) = toy_detector();
    let (_, grads) = losses_and_grads(&model, &x, &rpn_samples, &roi_samples).unwrap();

    let mut max_err: f64 = 0.0;
    let n_params = grads.slots.len();
    for idx in 0..n_params {
        let value = model.params()[idx].value.clone();
        let m = &model;
        let rs = &rpn_samples;
        let os = &roi_samples;
        let xi = &x;
        let loss_fn = move |t: &Tensor| -> f64 {
            let mut probe = m.clone();
            probe.params_mut()[idx].value = t.clone();
            losses_and_grads(&probe, xi, rs, os).unwrap().0.total()
        };
        let err = finite_diff_check(loss_fn, &value, &grads.slots[idx], 1e-5);
        max_err = max_err.max(err);
    }
    CheckResult { name: "detector_toy_loss", max_rel_err: max_err, tolerance: GRAD_TOLERANCE }
}

/// Runs every gradient suite.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_conv2d(),
        check_linear(),
        check_max_pool2d(),
        check_relu(),
        check_bilinear_sample(),
        check_roi_align(),
        check_softmax_cross_entropy(),
        check_smooth_l1(),
        check_detector_loss(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn individual_op_gradients_pass() {
        for check in [
            check_conv2d(),
            check_linear(),
            check_max_pool2d(),
            check_relu(),
            check_bilinear_sample(),
            check_roi_align(),
            check_softmax_cross_entropy(),
            check_smooth_l1(),
        ] {
            assert!(
                check.pass(),
                "{}: max relative error {} over tolerance {}",
                check.name,
                check.max_rel_err,
                check.tolerance
            );
        }
    }

    #[test]
    fn end_to_end_toy_loss_gradient_passes() {
        let check = check_detector_loss();
        assert!(
            check.pass(),
            "detector_toy_loss: {} > {}",
            check.max_rel_err,
            check.tolerance
        );
    }
}

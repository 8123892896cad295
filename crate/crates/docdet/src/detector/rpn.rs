//! Region proposal head: a 3x3 sliding-window conv over the feature map
//! followed by 1x1 objectness and box-delta convolutions, shared across
//! every location.

use super::{DetectorError, DetectorModel};
use crate::numerics::{
    conv2d, conv2d_backward, conv2d_circular, relu, relu_backward, Tensor,
};

/// RPN outputs reshaped for consumers: objectness logits per anchor slot
/// as [k, H, W, 2] (background, foreground) and deltas as [k, H, W, 4]
/// (dx, dy, dw, dh).
pub struct RpnOutput {
    pub scores: Tensor,
    pub deltas: Tensor,
}

/// Raw activations retained for the backward pass.
pub struct RpnTrace {
    pub mid_pre_relu: Tensor,
    pub mid_act: Tensor,
    pub output: RpnOutput,
}

fn reshape_outputs(
    cls_raw: &Tensor,
    reg_raw: &Tensor,
    k: usize,
) -> (Tensor, Tensor) {
    let (h, w) = (cls_raw.shape()[2], cls_raw.shape()[3]);
    let mut scores = Tensor::zeros(&[k, h, w, 2]);
    let mut deltas = Tensor::zeros(&[k, h, w, 4]);
    for a in 0..k {
        for y in 0..h {
            for x in 0..w {
                for c in 0..2 {
                    let v = cls_raw.at4(0, 2 * a + c, y, x);
                    scores.data_mut()[((a * h + y) * w + x) * 2 + c] = v;
                }
                for c in 0..4 {
                    let v = reg_raw.at4(0, 4 * a + c, y, x);
                    deltas.data_mut()[((a * h + y) * w + x) * 4 + c] = v;
                }
            }
        }
    }
    (scores, deltas)
}

/// Shared-weight forward over [C, H, W] features.
pub fn rpn_forward(model: &DetectorModel, features: &Tensor) -> Result<RpnOutput, DetectorError> {
    Ok(rpn_forward_traced(model, features)?.output)
}

pub fn rpn_forward_traced(
    model: &DetectorModel,
    features: &Tensor,
) -> Result<RpnTrace, DetectorError> {
    let x = features.clone().reshape(&[
        1,
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
    ])?;
    let mid_pre = conv2d(
        &x,
        &model.rpn_mid.weight.value,
        &model.rpn_mid.bias.value,
        1,
        1,
    )?;
    let mid = relu(&mid_pre);
    let cls_raw = conv2d(&mid, &model.rpn_cls.weight.value, &model.rpn_cls.bias.value, 1, 0)?;
    let reg_raw = conv2d(&mid, &model.rpn_reg.weight.value, &model.rpn_reg.bias.value, 1, 0)?;
    let k = model.anchor_cfg.anchors_per_cell();
    let (scores, deltas) = reshape_outputs(&cls_raw, &reg_raw, k);
    Ok(RpnTrace {
        mid_pre_relu: mid_pre,
        mid_act: mid,
        output: RpnOutput { scores, deltas },
    })
}

/// Test rig: identical weights but periodic padding in the 3x3 conv, so
/// the whole head commutes exactly with circular shifts of the feature
/// map. Used by the translation-equivariance checks.
pub fn rpn_forward_periodic(
    model: &DetectorModel,
    features: &Tensor,
) -> Result<RpnOutput, DetectorError> {
    let x = features.clone().reshape(&[
        1,
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
    ])?;
    let mid_pre = conv2d_circular(&x, &model.rpn_mid.weight.value, &model.rpn_mid.bias.value)?;
    let mid = relu(&mid_pre);
    let cls_raw = conv2d(&mid, &model.rpn_cls.weight.value, &model.rpn_cls.bias.value, 1, 0)?;
    let reg_raw = conv2d(&mid, &model.rpn_reg.weight.value, &model.rpn_reg.bias.value, 1, 0)?;
    let k = model.anchor_cfg.anchors_per_cell();
    let (scores, deltas) = reshape_outputs(&cls_raw, &reg_raw, k);
    Ok(RpnOutput { scores, deltas })
}

/// Backward from gradients on the reshaped score/delta tensors. Adds the
/// three conv-layer gradients into `grads` ordered
/// (mid.w, mid.b, cls.w, cls.b, reg.w, reg.b) and returns d(features).
pub fn rpn_backward(
    model: &DetectorModel,
    features: &Tensor,
    trace: &RpnTrace,
    d_scores: &Tensor,
    d_deltas: &Tensor,
    grads: &mut [Tensor],
) -> Result<Tensor, DetectorError> {
    assert_eq!(grads.len(), 6);
    let k = model.anchor_cfg.anchors_per_cell();
    let (h, w) = (features.shape()[1], features.shape()[2]);

    // invert the [k,H,W,c] reshape back to channel-major raw layouts
    let mut d_cls_raw = Tensor::zeros(&[1, 2 * k, h, w]);
    let mut d_reg_raw = Tensor::zeros(&[1, 4 * k, h, w]);
    for a in 0..k {
        for y in 0..h {
            for x in 0..w {
                for c in 0..2 {
                    let g = d_scores.data()[((a * h + y) * w + x) * 2 + c];
                    if g != 0.0 {
                        d_cls_raw.set4(0, 2 * a + c, y, x, g);
                    }
                }
                for c in 0..4 {
                    let g = d_deltas.data()[((a * h + y) * w + x) * 4 + c];
                    if g != 0.0 {
                        d_reg_raw.set4(0, 4 * a + c, y, x, g);
                    }
                }
            }
        }
    }

    let (d_mid_cls, d_cls_w, d_cls_b) =
        conv2d_backward(&trace.mid_act, &model.rpn_cls.weight.value, 1, 0, &d_cls_raw)?;
    let (d_mid_reg, d_reg_w, d_reg_b) =
        conv2d_backward(&trace.mid_act, &model.rpn_reg.weight.value, 1, 0, &d_reg_raw)?;
    grads[2].add_assign(&d_cls_w);
    grads[3].add_assign(&d_cls_b);
    grads[4].add_assign(&d_reg_w);
    grads[5].add_assign(&d_reg_b);

    let mut d_mid = d_mid_cls;
    d_mid.add_assign(&d_mid_reg);
    let d_mid_pre = relu_backward(&trace.mid_pre_relu, &d_mid);

    let x = features.clone().reshape(&[1, features.shape()[0], h, w])?;
    let (d_x, d_mid_w, d_mid_b) =
        conv2d_backward(&x, &model.rpn_mid.weight.value, 1, 1, &d_mid_pre)?;
    grads[0].add_assign(&d_mid_w);
    grads[1].add_assign(&d_mid_b);
    Ok(d_x.reshape(&[features.shape()[0], h, w])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{BackboneConfig, RoiConfig};
    use crate::geometry::{AnchorConfig, LabelSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> DetectorModel {
        DetectorModel::new(
            BackboneConfig::tiny(),
            AnchorConfig::reference(),
            RoiConfig::default(),
            LabelSet::graphical(),
            11,
        )
        .unwrap()
    }

    fn random_features(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[c, h, w], (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn output_shapes_follow_k30() {
        let m = model();
        let f = random_features(32, 6, 7, 1);
        let out = rpn_forward(&m, &f).unwrap();
        assert_eq!(out.scores.shape(), &[30, 6, 7, 2]);
        assert_eq!(out.deltas.shape(), &[30, 6, 7, 4]);
    }

    #[test]
    fn constant_features_give_constant_scores() {
        let m = model();
        let f = Tensor::filled(&[32, 5, 5], 0.37);
        let out = rpn_forward(&m, &f).unwrap();
        // weight sharing: identical inputs at interior locations produce
        // identical outputs; with constant features plus padding, compare
        // the interior cells (their 3x3 neighborhoods match exactly)
        for a in 0..30 {
            let base_s: Vec<f64> = (0..2)
                .map(|c| out.scores.data()[((a * 5 + 1) * 5 + 1) * 2 + c])
                .collect();
            let base_d: Vec<f64> = (0..4)
                .map(|c| out.deltas.data()[((a * 5 + 1) * 5 + 1) * 4 + c])
                .collect();
            for y in 1..4 {
                for x in 1..4 {
                    for c in 0..2 {
                        let v = out.scores.data()[((a * 5 + y) * 5 + x) * 2 + c];
                        assert!((v - base_s[c]).abs() < 1e-12);
                    }
                    for c in 0..4 {
                        let v = out.deltas.data()[((a * 5 + y) * 5 + x) * 4 + c];
                        assert!((v - base_d[c]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn periodic_rig_is_exactly_shift_equivariant() {
        let m = model();
        let (c, h, w) = (32, 6, 8);
        let f = random_features(c, h, w, 5);
        let base = rpn_forward_periodic(&m, &f).unwrap();

        let (dy, dx) = (2usize, 5usize);
        let mut shifted = Tensor::zeros(&[c, h, w]);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    shifted.set3(ci, (y + dy) % h, (x + dx) % w, f.at3(ci, y, x));
                }
            }
        }
        let out = rpn_forward_periodic(&m, &shifted).unwrap();
        let k = 30;
        for a in 0..k {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..2 {
                        let v0 = base.scores.data()[((a * h + y) * w + x) * 2 + ch];
                        let v1 = out.scores.data()
                            [((a * h + (y + dy) % h) * w + (x + dx) % w) * 2 + ch];
                        assert!((v0 - v1).abs() <= 1e-9);
                    }
                    for ch in 0..4 {
                        let v0 = base.deltas.data()[((a * h + y) * w + x) * 4 + ch];
                        let v1 = out.deltas.data()
                            [((a * h + (y + dy) % h) * w + (x + dx) % w) * 4 + ch];
                        assert!((v0 - v1).abs() <= 1e-9);
                    }
                }
            }
        }
    }
}

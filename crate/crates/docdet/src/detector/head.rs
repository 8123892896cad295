//! Detection head: flattened RoI features through a hidden linear layer
//! into class scores and per-class box deltas. Softmax is applied by the
//! caller at inference only.

use super::{DetectorError, DetectorModel};
use crate::numerics::{linear, linear_backward, relu, relu_backward, Tensor};

pub struct HeadOutput {
    /// Logits over |classes| + 1 (background first).
    pub cls_logits: Tensor,
    /// 4 delta values per class slot, background included, laid out
    /// [dx, dy, dw, dh] * (|classes| + 1).
    pub reg: Tensor,
}

pub struct HeadTrace {
    pub flat: Tensor,
    pub h1_pre: Tensor,
    pub h1: Tensor,
    pub h2_pre: Tensor,
    pub h2: Tensor,
    pub output: HeadOutput,
}

pub fn detection_head(
    model: &DetectorModel,
    roi_features: &Tensor,
) -> Result<HeadOutput, DetectorError> {
    Ok(detection_head_traced(model, roi_features)?.output)
}

pub fn detection_head_traced(
    model: &DetectorModel,
    roi_features: &Tensor,
) -> Result<HeadTrace, DetectorError> {
    let flat = roi_features.clone().reshape(&[1, roi_features.len()])?;
    let h1_pre = linear(&flat, &model.fc1.weight.value, &model.fc1.bias.value)?;
    let h1 = relu(&h1_pre);
    let h2_pre = linear(&h1, &model.fc2.weight.value, &model.fc2.bias.value)?;
    let h2 = relu(&h2_pre);
    let cls = linear(&h2, &model.cls_head.weight.value, &model.cls_head.bias.value)?;
    let reg = linear(&h2, &model.reg_head.weight.value, &model.reg_head.bias.value)?;
    let n = model.num_classes() + 1;
    Ok(HeadTrace {
        flat,
        h1_pre,
        h1,
        h2_pre,
        h2,
        output: HeadOutput {
            cls_logits: cls.reshape(&[n])?,
            reg: reg.reshape(&[4 * n])?,
        },
    })
}

/// Backward through the head. `grads` is ordered (fc1.w, fc1.b, fc2.w,
/// fc2.b, cls.w, cls.b, reg.w, reg.b); returns d(roi_features).
pub fn head_backward(
    model: &DetectorModel,
    trace: &HeadTrace,
    d_cls: &Tensor,
    d_reg: &Tensor,
    grads: &mut [Tensor],
    roi_shape: &[usize],
) -> Result<Tensor, DetectorError> {
    assert_eq!(grads.len(), 8);
    let n = model.num_classes() + 1;
    let d_cls_row = d_cls.clone().reshape(&[1, n])?;
    let d_reg_row = d_reg.clone().reshape(&[1, 4 * n])?;

    let (d_h2_cls, d_w, d_b) =
        linear_backward(&trace.h2, &model.cls_head.weight.value, &d_cls_row)?;
    grads[4].add_assign(&d_w);
    grads[5].add_assign(&d_b);
    let (d_h2_reg, d_w, d_b) =
        linear_backward(&trace.h2, &model.reg_head.weight.value, &d_reg_row)?;
    grads[6].add_assign(&d_w);
    grads[7].add_assign(&d_b);

    let mut d_h2 = d_h2_cls;
    d_h2.add_assign(&d_h2_reg);
    let d_h2_pre = relu_backward(&trace.h2_pre, &d_h2);

    let (d_h1, d_w, d_b) = linear_backward(&trace.h1, &model.fc2.weight.value, &d_h2_pre)?;
    grads[2].add_assign(&d_w);
    grads[3].add_assign(&d_b);
    let d_h1_pre = relu_backward(&trace.h1_pre, &d_h1);

    let (d_flat, d_w, d_b) = linear_backward(&trace.flat, &model.fc1.weight.value, &d_h1_pre)?;
    grads[0].add_assign(&d_w);
    grads[1].add_assign(&d_b);
    Ok(d_flat.reshape(roi_shape)?)
}

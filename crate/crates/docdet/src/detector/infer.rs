//! Proposal generation and full-pipeline inference.

use super::backbone::backbone_forward;
use super::preprocess::{preprocess_image, to_original_frame, INPUT_SIZE};
use super::roi::{roi_align, roi_pool};
use super::rpn::{rpn_forward, RpnOutput};
use super::{DetectorError, DetectorModel, ProposalConfig, RoiMode};
use crate::data::DocumentImage;
use crate::geometry::{
    clip_box, decode_delta, generate_anchors, nms, BBox, BoxDelta, ClassLabel, ScoredBox,
    DELTA_LOG_CLAMP,
};
use crate::numerics::{softmax, Tensor};

/// Foreground probability from the (background, foreground) logit pair.
#[inline]
fn objectness(bg: f64, fg: f64) -> f64 {
    1.0 / (1.0 + (bg - fg).exp())
}

/// Decodes RPN outputs into scored, clipped, class-agnostic proposals:
/// top `pre_nms_top_n` by objectness, suppressed at `nms_threshold`,
/// truncated to `post_nms_top_n`. Returned boxes carry label 0; the label
/// has no class meaning at this stage.
pub fn propose(
    output: &RpnOutput,
    anchors: &[BBox],
    cfg: &ProposalConfig,
    image_size: (f64, f64),
) -> Result<Vec<ScoredBox>, DetectorError> {
    cfg.validate()?;
    let s = output.scores.shape();
    let (k, h, w) = (s[0], s[1], s[2]);
    assert_eq!(
        anchors.len(),
        k * h * w,
        "anchor list does not match rpn output grid"
    );

    let scores = output.scores.data();
    let mut ranked: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(k * h * w);
    for a in 0..k {
        for i in 0..h {
            for j in 0..w {
                let off = ((a * h + i) * w + j) * 2;
                ranked.push((objectness(scores[off], scores[off + 1]), a, i, j));
            }
        }
    }
    ranked.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((x.1, x.2, x.3).cmp(&(y.1, y.2, y.3)))
    });
    ranked.truncate(cfg.pre_nms_top_n);

    let deltas = output.deltas.data();
    let mut candidates = Vec::with_capacity(ranked.len());
    for (score, a, i, j) in ranked {
        let anchor = &anchors[(i * w + j) * k + a];
        let off = ((a * h + i) * w + j) * 4;
        let delta = BoxDelta {
            dx: deltas[off],
            dy: deltas[off + 1],
            dw: deltas[off + 2],
            dh: deltas[off + 3],
        };
        let decoded = decode_delta(anchor, &delta, DELTA_LOG_CLAMP);
        let clipped = clip_box(&decoded, image_size.0, image_size.1);
        if clipped.width() < cfg.min_box_size || clipped.height() < cfg.min_box_size {
            continue;
        }
        candidates.push(ScoredBox::new(clipped, ClassLabel(0), score));
    }

    let mut kept = nms(&candidates, cfg.nms_threshold);
    kept.truncate(cfg.post_nms_top_n);
    Ok(kept)
}

/// Extracts the fixed-size RoI feature block according to the model's
/// RoI mode. The box is in input-image coordinates.
pub fn extract_roi_features(model: &DetectorModel, features: &Tensor, bbox: &BBox) -> Tensor {
    let stride = model.anchor_cfg.stride() as f64;
    let roi = bbox.scale(1.0 / stride, 1.0 / stride);
    match model.roi_cfg.mode {
        RoiMode::Pool => roi_pool(features, &roi, &model.roi_cfg),
        RoiMode::Align => roi_align(features, &roi, &model.roi_cfg),
    }
}

/// Full inference on one page: proposals, per-RoI classification and
/// per-class box regression, class-wise NMS, and mapping back to the
/// original image frame. Background is never emitted; detections with
/// probability not exceeding `score_threshold` are dropped.
pub fn detect(
    model: &DetectorModel,
    image: &DocumentImage,
    score_threshold: f64,
    nms_threshold: f64,
) -> Result<Vec<ScoredBox>, DetectorError> {
    detect_with(model, image, score_threshold, nms_threshold, &ProposalConfig::default())
}

pub fn detect_with(
    model: &DetectorModel,
    image: &DocumentImage,
    score_threshold: f64,
    nms_threshold: f64,
    proposal_cfg: &ProposalConfig,
) -> Result<Vec<ScoredBox>, DetectorError> {
    let x = preprocess_image(image)?;
    let features = backbone_forward(model, &x)?;
    let (fh, fw) = (features.shape()[1], features.shape()[2]);
    let anchors = generate_anchors(&model.anchor_cfg, fh, fw);
    let rpn_out = rpn_forward(model, &features)?;
    let size = INPUT_SIZE as f64;
    let proposals = propose(&rpn_out, &anchors, proposal_cfg, (size, size))?;

    let n_classes = model.num_classes();
    let mut candidates: Vec<ScoredBox> = Vec::new();
    for prop in &proposals {
        let roi_feat = extract_roi_features(model, &features, &prop.bbox);
        let out = super::head::detection_head(model, &roi_feat)?;
        let probs = softmax(&out.cls_logits);
        for class in 0..n_classes {
            let p = probs.data()[class + 1];
            if p <= score_threshold {
                continue;
            }
            let off = 4 * (class + 1);
            let delta = BoxDelta {
                dx: out.reg.data()[off],
                dy: out.reg.data()[off + 1],
                dw: out.reg.data()[off + 2],
                dh: out.reg.data()[off + 3],
            };
            let refined = decode_delta(&prop.bbox, &delta, DELTA_LOG_CLAMP);
            let clipped = clip_box(&refined, size, size);
            if clipped.width() < proposal_cfg.min_box_size
                || clipped.height() < proposal_cfg.min_box_size
            {
                continue;
            }
            candidates.push(ScoredBox::new(clipped, ClassLabel(class as u32), p));
        }
    }

    let kept = nms(&candidates, nms_threshold);
    Ok(kept
        .into_iter()
        .map(|d| ScoredBox {
            bbox: to_original_frame(&d.bbox, image.width, image.height),
            ..d
        })
        .collect())
}

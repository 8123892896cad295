//! Training-time assignment of anchors (RPN) and proposals (head) to
//! ground-truth boxes.

use crate::geometry::{encode_delta, iou, BBox, BoxDelta, ClassLabel};

use super::MatchConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorAssignment {
    /// Matched to ground truth `gt` with the encoded regression target.
    Positive { gt: usize, delta: BoxDelta },
    Negative,
    Ignore,
}

/// Fraction of a ground truth's best anchor IoU that still counts as
/// "equally best" for the argmax rule, so thin objects whose best overlap
/// sits below the positive threshold still collect a handful of positive
/// anchors instead of exactly one.
const ARGMAX_BAND: f64 = 0.9;

/// Labels every anchor against the ground-truth boxes: positive at IoU >=
/// `positive_iou` with any box, negative at max IoU <= `negative_iou`,
/// otherwise ignored. Additionally, every anchor within [`ARGMAX_BAND`]
/// of a ground truth's best overlap is forced positive so no object is
/// left without positive samples. Degenerate ground-truth boxes are
/// skipped. Sampling the training batch from these labels is the
/// caller's concern.
pub fn assign_anchor_labels(
    anchors: &[BBox],
    gts: &[BBox],
    cfg: &MatchConfig,
) -> Vec<AnchorAssignment> {
    let valid: Vec<(usize, &BBox)> = gts
        .iter()
        .enumerate()
        .filter(|(_, g)| g.width() > 1e-9 && g.height() > 1e-9)
        .collect();
    if valid.is_empty() {
        return vec![AnchorAssignment::Negative; anchors.len()];
    }

    let mut out = Vec::with_capacity(anchors.len());
    // per-gt best overlap for the argmax rule
    let mut best_for_gt: Vec<f64> = vec![0.0; valid.len()];

    for anchor in anchors.iter() {
        let mut max_iou = 0.0f64;
        let mut argmax = 0usize;
        for (vi, (_, gt)) in valid.iter().enumerate() {
            let ov = iou(anchor, gt);
            if ov > max_iou {
                max_iou = ov;
                argmax = vi;
            }
            if ov > best_for_gt[vi] {
                best_for_gt[vi] = ov;
            }
        }
        let a = if max_iou >= cfg.positive_iou {
            AnchorAssignment::Positive {
                gt: valid[argmax].0,
                delta: encode_delta(anchor, valid[argmax].1).expect("non-degenerate boxes"),
            }
        } else if max_iou <= cfg.negative_iou {
            AnchorAssignment::Negative
        } else {
            AnchorAssignment::Ignore
        };
        out.push(a);
    }

    // argmax rule: every gt claims the anchors at (or within a band of)
    // its best overlap even when that overlap is below the positive
    // threshold
    for (ai, anchor) in anchors.iter().enumerate() {
        if matches!(out[ai], AnchorAssignment::Positive { .. }) {
            continue;
        }
        for (vi, (gt_index, gt_box)) in valid.iter().enumerate() {
            if best_for_gt[vi] <= 0.0 {
                continue;
            }
            let ov = iou(anchor, gt_box);
            if ov >= best_for_gt[vi] * ARGMAX_BAND {
                out[ai] = AnchorAssignment::Positive {
                    gt: *gt_index,
                    delta: encode_delta(anchor, gt_box).expect("non-degenerate boxes"),
                };
                break;
            }
        }
    }
    out
}

/// Head-stage assignment of one candidate box: foreground class plus
/// regression target when IoU with some ground truth reaches
/// `head_positive_iou`, background otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoiAssignment {
    Foreground { label: ClassLabel, delta: BoxDelta },
    Background,
}

pub fn assign_roi_labels(
    candidates: &[BBox],
    gts: &[(BBox, ClassLabel)],
    cfg: &MatchConfig,
) -> Vec<RoiAssignment> {
    candidates
        .iter()
        .map(|cand| {
            let mut best: Option<(f64, usize)> = None;
            for (gi, (gt, _)) in gts.iter().enumerate() {
                if gt.width() <= 1e-9 || gt.height() <= 1e-9 {
                    continue;
                }
                let ov = iou(cand, gt);
                if best.map_or(true, |(b, _)| ov > b) {
                    best = Some((ov, gi));
                }
            }
            match best {
                Some((ov, gi)) if ov >= cfg.head_positive_iou && cand.width() > 1e-9 && cand.height() > 1e-9 => {
                    RoiAssignment::Foreground {
                        label: gts[gi].1,
                        delta: encode_delta(cand, &gts[gi].0).expect("non-degenerate boxes"),
                    }
                }
                _ => RoiAssignment::Background,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MatchConfig {
        MatchConfig::default()
    }

    #[test]
    fn high_iou_anchor_is_positive() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        let anchor = BBox::new(0.0, 0.0, 10.0, 12.0); // IoU 10/12 = 0.83
        let out = assign_anchor_labels(&[anchor], &[gt], &cfg());
        assert!(matches!(out[0], AnchorAssignment::Positive { gt: 0, .. }));
    }

    #[test]
    fn low_iou_anchor_is_negative() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        let anchor = BBox::new(50.0, 50.0, 60.0, 60.0);
        let out = assign_anchor_labels(&[anchor], &[gt], &cfg());
        assert_eq!(out[0], AnchorAssignment::Negative);
    }

    #[test]
    fn argmax_rule_rescues_poorly_covered_gt() {
        // best anchor only reaches IoU 0.4: still positive via argmax
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        let a0 = BBox::new(0.0, 0.0, 10.0, 25.0); // IoU = 100/250 = 0.4
        let a1 = BBox::new(40.0, 40.0, 60.0, 60.0); // disjoint
        let out = assign_anchor_labels(&[a1, a0], &[gt], &cfg());
        assert_eq!(out[0], AnchorAssignment::Negative);
        match out[1] {
            AnchorAssignment::Positive { gt: 0, delta } => {
                // the stored delta decodes back onto the gt
                let back = crate::geometry::decode_delta(&a0, &delta, 10.0);
                assert!((back.x_max - gt.x_max).abs() < 1e-9);
                assert!((back.y_max - gt.y_max).abs() < 1e-9);
            }
            other => panic!("expected positive, got {other:?}"),
        }
    }

    #[test]
    fn in_between_iou_is_ignored() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        // two anchors on the same gt; the better one is taken by argmax,
        // the weaker sits between the thresholds -> ignore
        let strong = BBox::new(0.0, 0.0, 10.0, 11.0);
        let weak = BBox::new(0.0, 0.0, 10.0, 20.0); // IoU 0.5
        let out = assign_anchor_labels(&[strong, weak], &[gt], &cfg());
        assert!(matches!(out[0], AnchorAssignment::Positive { .. }));
        assert_eq!(out[1], AnchorAssignment::Ignore);
    }

    #[test]
    fn no_ground_truth_makes_everything_negative() {
        let anchors = vec![BBox::new(0.0, 0.0, 4.0, 4.0); 5];
        let out = assign_anchor_labels(&anchors, &[], &cfg());
        assert!(out.iter().all(|a| *a == AnchorAssignment::Negative));
    }

    #[test]
    fn degenerate_gt_is_skipped() {
        let gt = BBox::new(5.0, 5.0, 5.0, 5.0);
        let anchors = vec![BBox::new(0.0, 0.0, 10.0, 10.0)];
        let out = assign_anchor_labels(&anchors, &[gt], &cfg());
        assert_eq!(out[0], AnchorAssignment::Negative);
    }

    #[test]
    fn roi_assignment_thresholds_on_half_iou() {
        let gts = vec![(BBox::new(0.0, 0.0, 10.0, 10.0), ClassLabel(2))];
        let hit = BBox::new(0.0, 0.0, 10.0, 12.0);
        let miss = BBox::new(0.0, 0.0, 10.0, 30.0);
        let out = assign_roi_labels(&[hit, miss], &gts, &cfg());
        assert!(matches!(
            out[0],
            RoiAssignment::Foreground { label: ClassLabel(2), .. }
        ));
        assert_eq!(out[1], RoiAssignment::Background);
    }
}

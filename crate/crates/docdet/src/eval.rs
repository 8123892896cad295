//! Detection evaluation: IoU-thresholded greedy matching, per-class AP
//! with all-point interpolation, precision/recall/F1 at a fixed operating
//! score, mAP / average F1 and IoU-threshold sweeps.
//!
//! Matching follows the VOC convention: within each image, predictions of
//! a class are visited in descending score order and each is matched to
//! the unmatched ground truth of maximum IoU; the match counts as a true
//! positive iff that IoU reaches the threshold, and every ground truth is
//! consumed at most once.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox, ClassLabel, LabelSet, ScoredBox};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions use labels {names:?} outside the ground-truth label set {known:?}")]
    UnknownLabels { names: Vec<String>, known: Vec<String> },
    #[error("iou threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("thresholds must be sorted ascending: {0:?}")]
    UnsortedThresholds(Vec<f64>),
}

/// Ground truth per image id.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthSet {
    pub labels: LabelSet,
    pub by_image: BTreeMap<String, Vec<(BBox, ClassLabel)>>,
}

impl GroundTruthSet {
    pub fn new(labels: LabelSet) -> Self {
        Self { labels, by_image: BTreeMap::new() }
    }

    pub fn insert(&mut self, image_id: impl Into<String>, bbox: BBox, label: ClassLabel) {
        self.by_image.entry(image_id.into()).or_default().push((bbox, label));
    }

    fn count_label(&self, label: ClassLabel) -> usize {
        self.by_image
            .values()
            .flat_map(|v| v.iter())
            .filter(|(_, l)| *l == label)
            .count()
    }
}

/// Detections per image id.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    pub by_image: BTreeMap<String, Vec<ScoredBox>>,
}

impl PredictionSet {
    pub fn insert(&mut self, image_id: impl Into<String>, det: ScoredBox) {
        self.by_image.entry(image_id.into()).or_default().push(det);
    }

    fn max_label_index(&self) -> Option<usize> {
        self.by_image
            .values()
            .flat_map(|v| v.iter())
            .map(|d| d.label.index())
            .max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub ap: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
}

/// Per-class metrics plus the two summary columns, at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub score_cutoff: f64,
    pub classes: Vec<(String, ClassMetrics)>,
    pub map: f64,
    pub ave_f1: f64,
}

/// Default operating score for the single-point precision/recall/F1
/// numbers (AP itself uses every prediction).
pub const DEFAULT_SCORE_CUTOFF: f64 = 0.5;

/// Greedy per-image matching for one class. Returns the TP/FP flag of
/// every prediction of that class ordered by descending score across the
/// whole set, plus the number of unmatched ground truths.
pub fn match_detections(
    preds: &PredictionSet,
    gts: &GroundTruthSet,
    iou_threshold: f64,
    label: ClassLabel,
) -> Result<(Vec<(f64, bool)>, usize), EvalError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(EvalError::BadThreshold(iou_threshold));
    }
    let mut flags: Vec<(f64, bool)> = Vec::new();
    let mut fn_count = 0usize;

    let empty: Vec<ScoredBox> = Vec::new();
    for (image_id, gt_list) in &gts.by_image {
        let gt_boxes: Vec<&BBox> = gt_list
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(b, _)| b)
            .collect();
        let dets = preds.by_image.get(image_id).unwrap_or(&empty);
        let mut order: Vec<usize> = (0..dets.len())
            .filter(|&i| dets[i].label == label)
            .collect();
        order.sort_by(|&a, &b| {
            dets[b]
                .score
                .partial_cmp(&dets[a].score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });

        let mut used = vec![false; gt_boxes.len()];
        for &di in &order {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gt_boxes.iter().enumerate() {
                if used[gi] {
                    continue;
                }
                let ov = iou(&dets[di].bbox, gt);
                // ties broken by lower ground-truth index
                if best.map_or(true, |(_, b)| ov > b) {
                    best = Some((gi, ov));
                }
            }
            let tp = match best {
                Some((gi, ov)) if ov >= iou_threshold => {
                    used[gi] = true;
                    true
                }
                _ => false,
            };
            flags.push((dets[di].score, tp));
        }
        fn_count += used.iter().filter(|&&u| !u).count();
    }
    // Predictions on images absent from the ground-truth set are false
    // positives of this class.
    for (image_id, dets) in &preds.by_image {
        if gts.by_image.contains_key(image_id) {
            continue;
        }
        for d in dets.iter().filter(|d| d.label == label) {
            flags.push((d.score, false));
        }
    }

    flags.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    Ok((flags, fn_count))
}

/// Area under the precision envelope over recall, all-point
/// interpolation. `flags` must be ordered by descending score.
pub fn average_precision(flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    // (recall, precision) after each prediction
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(flags.len());
    for &is_tp in flags {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // precision envelope: best precision at any recall >= r
    let mut envelope = points;
    let mut best = 0.0f64;
    for p in envelope.iter_mut().rev() {
        best = best.max(p.1);
        p.1 = best;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in envelope {
        if r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

/// Unweighted arithmetic mean of per-class APs.
pub fn mean_ap(per_class_ap: &[f64]) -> f64 {
    assert!(!per_class_ap.is_empty(), "mean over an empty class set");
    per_class_ap.iter().sum::<f64>() / per_class_ap.len() as f64
}

/// F1 from already-computed precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// (precision, recall, f1) from raw counts, with 0/0 defined as 0 so
/// empty classes never poison the means.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_count: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_count == 0 { 0.0 } else { tp as f64 / (tp + fn_count) as f64 };
    (precision, recall, f1_score(precision, recall))
}

/// Full per-class evaluation at one IoU threshold. AP uses every
/// prediction; the precision/recall/F1 columns count only predictions
/// scoring at least `score_cutoff`.
pub fn evaluate_at(
    preds: &PredictionSet,
    gts: &GroundTruthSet,
    iou_threshold: f64,
    score_cutoff: f64,
) -> Result<EvalReport, EvalError> {
    if let Some(max_idx) = preds.max_label_index() {
        if max_idx >= gts.labels.len() {
            let names: Vec<String> = preds
                .by_image
                .values()
                .flat_map(|v| v.iter())
                .filter(|d| d.label.index() >= gts.labels.len())
                .map(|d| format!("id {}", d.label.0))
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            return Err(EvalError::UnknownLabels {
                names,
                known: gts.labels.names().to_vec(),
            });
        }
    }

    let cut = filter_by_score(preds, score_cutoff);
    let mut classes = Vec::with_capacity(gts.labels.len());
    let mut aps = Vec::new();
    let mut f1s = Vec::new();
    for label in gts.labels.labels() {
        let n_gt = gts.count_label(label);
        let (flags, _) = match_detections(preds, gts, iou_threshold, label)?;
        let ordered: Vec<bool> = flags.iter().map(|&(_, tp)| tp).collect();
        let ap = average_precision(&ordered, n_gt);

        // operating-point counts from a second pass over the cutoff subset
        let (cut_flags, fn_count) = match_detections(&cut, gts, iou_threshold, label)?;
        let tp = cut_flags.iter().filter(|&&(_, t)| t).count();
        let fp = cut_flags.len() - tp;
        let (precision, recall, f1) = precision_recall_f1(tp, fp, fn_count);

        aps.push(ap);
        f1s.push(f1);
        classes.push((
            gts.labels.name(label).unwrap_or("?").to_string(),
            ClassMetrics { ap, precision, recall, f1, tp, fp, fn_count },
        ));
    }
    Ok(EvalReport {
        iou_threshold,
        score_cutoff,
        classes,
        map: mean_ap(&aps),
        ave_f1: mean_ap(&f1s),
    })
}

/// [`evaluate_at`] with the default operating score of 0.5.
pub fn evaluate(
    preds: &PredictionSet,
    gts: &GroundTruthSet,
    iou_threshold: f64,
) -> Result<EvalReport, EvalError> {
    evaluate_at(preds, gts, iou_threshold, DEFAULT_SCORE_CUTOFF)
}

fn filter_by_score(preds: &PredictionSet, cutoff: f64) -> PredictionSet {
    let mut out = PredictionSet::default();
    for (id, dets) in &preds.by_image {
        let kept: Vec<ScoredBox> = dets.iter().filter(|d| d.score >= cutoff).copied().collect();
        if !kept.is_empty() {
            out.by_image.insert(id.clone(), kept);
        }
    }
    out
}

/// One report per threshold over the same fixed predictions.
pub fn threshold_sweep(
    preds: &PredictionSet,
    gts: &GroundTruthSet,
    thresholds: &[f64],
) -> Result<Vec<EvalReport>, EvalError> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::UnsortedThresholds(thresholds.to_vec()));
    }
    thresholds.iter().map(|&t| evaluate(preds, gts, t)).collect()
}

impl EvalReport {
    /// Human-readable table mirroring the per-class + summary layout of
    /// the machine report.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "IoU threshold {:.2}, score cutoff {:.2}\n",
            self.iou_threshold, self.score_cutoff
        ));
        out.push_str(&format!(
            "{:<12} {:>7} {:>10} {:>8} {:>7} {:>6} {:>6} {:>6}\n",
            "class", "AP", "precision", "recall", "F1", "TP", "FP", "FN"
        ));
        for (name, m) in &self.classes {
            out.push_str(&format!(
                "{:<12} {:>7.3} {:>10.3} {:>8.3} {:>7.3} {:>6} {:>6} {:>6}\n",
                name, m.ap, m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_count
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>7.3} {:>27} {:>7.3}\n",
            "mean", self.map, "Ave F1:", self.ave_f1
        ));
        out
    }
}

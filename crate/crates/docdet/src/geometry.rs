//! Axis-aligned box arithmetic: IoU, anchor grids, regression-target
//! codecs, non-maximum suppression and clipping.
//!
//! Everything in this module is a pure function of its inputs and safe to
//! call from any number of threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("anchor scales must be non-empty and positive")]
    BadScales,
    #[error("anchor ratios must be non-empty and positive")]
    BadRatios,
    #[error("anchor stride must be positive")]
    BadStride,
    #[error("box has zero {0} and cannot be used as a regression reference")]
    DegenerateBox(&'static str),
}

/// Axis-aligned rectangle in continuous pixel coordinates.
///
/// `x_min <= x_max` and `y_min <= y_max` always hold; zero-area boxes are
/// allowed so corrupt annotations degrade to IoU 0 instead of aborting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        assert!(
            x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite(),
            "box coordinates must be finite"
        );
        assert!(x_min <= x_max && y_min <= y_max, "box corners out of order");
        Self { x_min, y_min, x_max, y_max }
    }

    /// Builds a box from any two opposite corners, swapping as needed.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1))
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    /// Rescales both corners; factors must be positive.
    pub fn scale(&self, sx: f64, sy: f64) -> Self {
        Self::new(
            self.x_min * sx,
            self.y_min * sy,
            self.x_max * sx,
            self.y_max * sy,
        )
    }
}

/// Index into a dataset's label set. Stable across serialization: the id
/// is the position of the class name in the manifest's label list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassLabel(pub u32);

impl ClassLabel {
    pub fn index(&self) -> usize {
        self.0 as usize
    }
}

/// Ordered set of class names; position defines the integer id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        assert!(!names.is_empty(), "label set must not be empty");
        Self { names }
    }

    /// The three document classes: table, figure, equation.
    pub fn graphical() -> Self {
        Self::new(["table", "figure", "equation"])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, label: ClassLabel) -> Option<&str> {
        self.names.get(label.index()).map(String::as_str)
    }

    pub fn lookup(&self, name: &str) -> Option<ClassLabel> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| ClassLabel(i as u32))
    }

    pub fn labels(&self) -> impl Iterator<Item = ClassLabel> + '_ {
        (0..self.names.len() as u32).map(ClassLabel)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::graphical()
    }
}

/// A classified detection with confidence in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub label: ClassLabel,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, label: ClassLabel, score: f64) -> Self {
        assert!((0.0..=1.0).contains(&score), "score must lie in [0,1]");
        Self { bbox, label, score }
    }
}

/// Anchor grid configuration. An anchor of scale `s` and ratio `r`
/// (height/width) has width `s/sqrt(r)` and height `s*sqrt(r)`, so the
/// ratio set {1..5} yields square-to-tall reference boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    scales: Vec<f64>,
    ratios: Vec<f64>,
    stride: usize,
}

impl AnchorConfig {
    pub fn new(scales: Vec<f64>, ratios: Vec<f64>, stride: usize) -> Result<Self, GeometryError> {
        if scales.is_empty() || scales.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(GeometryError::BadScales);
        }
        if ratios.is_empty() || ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(GeometryError::BadRatios);
        }
        if stride == 0 {
            return Err(GeometryError::BadStride);
        }
        Ok(Self { scales, ratios, stride })
    }

    /// Reference configuration: six power-of-two scales from 8 to 256 and
    /// height/width ratios 1 through 5, i.e. k = 30 anchors per location.
    pub fn reference() -> Self {
        Self::new(
            vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            16,
        )
        .expect("reference config is valid")
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Anchors per feature-map cell (k).
    pub fn anchors_per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Box-regression target: center offsets normalized by the anchor size
/// plus log width/height ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub const ZERO: BoxDelta = BoxDelta { dx: 0.0, dy: 0.0, dw: 0.0, dh: 0.0 };
}

/// Default clamp on |dw| and |dh| before exponentiation in
/// [`decode_delta`]; bounds decoded boxes to e^4 ≈ 55x the anchor size.
pub const DELTA_LOG_CLAMP: f64 = 4.0;

/// Jaccard overlap of two boxes. Degenerate boxes (zero area) and
/// disjoint pairs yield 0 by convention.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Tiles the anchor set over an `feature_h` x `feature_w` grid.
///
/// The anchor for grid cell (i, j), scale s and ratio r is centered at
/// ((j + 0.5) * stride, (i + 0.5) * stride) with width s/sqrt(r) and
/// height s*sqrt(r). Anchors may extend outside the image.
///
/// Output order is row-major over cells with the k per-cell anchors
/// contiguous, scale-major: index = ((i * W + j) * |scales| + si) * |ratios| + ri.
pub fn generate_anchors(cfg: &AnchorConfig, feature_h: usize, feature_w: usize) -> Vec<BBox> {
    let mut anchors = Vec::with_capacity(feature_h * feature_w * cfg.anchors_per_cell());
    let stride = cfg.stride as f64;
    for i in 0..feature_h {
        let cy = (i as f64 + 0.5) * stride;
        for j in 0..feature_w {
            let cx = (j as f64 + 0.5) * stride;
            for &s in &cfg.scales {
                for &r in &cfg.ratios {
                    let w = s / r.sqrt();
                    let h = s * r.sqrt();
                    anchors.push(BBox::from_center_size(cx, cy, w, h));
                }
            }
        }
    }
    anchors
}

/// Encodes `target` relative to `anchor` as center/log-size offsets.
pub fn encode_delta(anchor: &BBox, target: &BBox) -> Result<BoxDelta, GeometryError> {
    if anchor.width() <= 0.0 || anchor.height() <= 0.0 {
        return Err(GeometryError::DegenerateBox("anchor size"));
    }
    if target.width() <= 0.0 || target.height() <= 0.0 {
        return Err(GeometryError::DegenerateBox("target size"));
    }
    let (ax, ay) = anchor.center();
    let (tx, ty) = target.center();
    Ok(BoxDelta {
        dx: (tx - ax) / anchor.width(),
        dy: (ty - ay) / anchor.height(),
        dw: (target.width() / anchor.width()).ln(),
        dh: (target.height() / anchor.height()).ln(),
    })
}

/// Inverts [`encode_delta`]. `log_clamp` bounds |dw| and |dh| before
/// exponentiation so an unconstrained regression output cannot produce an
/// astronomically sized box; pass [`DELTA_LOG_CLAMP`] for the default.
pub fn decode_delta(anchor: &BBox, delta: &BoxDelta, log_clamp: f64) -> BBox {
    let (ax, ay) = anchor.center();
    let cx = ax + delta.dx * anchor.width();
    let cy = ay + delta.dy * anchor.height();
    let w = anchor.width() * delta.dw.clamp(-log_clamp, log_clamp).exp();
    let h = anchor.height() * delta.dh.clamp(-log_clamp, log_clamp).exp();
    BBox::from_center_size(cx, cy, w, h)
}

/// Greedy class-wise non-maximum suppression.
///
/// Boxes are visited in descending score order (ties broken by lower
/// input index); a visited box is kept unless it overlaps an already-kept
/// box of the same label with IoU strictly above `iou_threshold`. The
/// survivors come back sorted by descending score.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    assert!(
        (0.0..=1.0).contains(&iou_threshold),
        "iou_threshold must lie in [0,1]"
    );
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .partial_cmp(&boxes[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            boxes[k].label == boxes[i].label && iou(&boxes[k].bbox, &boxes[i].bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| boxes[i]).collect()
}

/// Clamps a box to the `[0, width] x [0, height]` window.
pub fn clip_box(b: &BBox, width: f64, height: f64) -> BBox {
    assert!(width > 0.0 && height > 0.0, "clip window must be positive");
    BBox::new(
        b.x_min.clamp(0.0, width),
        b.y_min.clamp(0.0, height),
        b.x_max.clamp(0.0, width),
        b.y_max.clamp(0.0, height),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn iou_identity_is_one() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        // inter = 5*10 = 50, union = 100 + 100 - 50 = 150
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert!(approx(iou(&a, &b), 50.0 / 150.0, 1e-12));
    }

    #[test]
    fn iou_degenerate_is_zero() {
        let point = BBox::new(5.0, 5.0, 5.0, 5.0);
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&point, &point), 0.0);
        assert_eq!(iou(&point, &b), 0.0);
    }

    #[test]
    fn iou_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let ab = iou(&a, &b);
            let ba = iou(&b, &a);
            assert_eq!(ab, ba);
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    fn random_box(rng: &mut ChaCha8Rng) -> BBox {
        let x0 = rng.gen_range(0.0..90.0);
        let y0 = rng.gen_range(0.0..90.0);
        let w = rng.gen_range(1.0..40.0);
        let h = rng.gen_range(1.0..40.0);
        BBox::new(x0, y0, x0 + w, y0 + h)
    }

    #[test]
    fn reference_config_yields_30_anchors_per_cell() {
        let cfg = AnchorConfig::reference();
        assert_eq!(cfg.anchors_per_cell(), 30);
        let anchors = generate_anchors(&cfg, 1, 1);
        assert_eq!(anchors.len(), 30);
        // All share the single cell center.
        for a in &anchors {
            let (cx, cy) = a.center();
            assert!(approx(cx, 8.0, 1e-9) && approx(cy, 8.0, 1e-9));
        }
    }

    #[test]
    fn one_anchor_per_cell_on_2x2_grid() {
        let cfg = AnchorConfig::new(vec![32.0], vec![1.0], 16).unwrap();
        let anchors = generate_anchors(&cfg, 2, 2);
        assert_eq!(anchors.len(), 4);
    }

    #[test]
    fn anchor_center_and_side_convention() {
        let cfg = AnchorConfig::new(vec![32.0], vec![1.0], 16).unwrap();
        let anchors = generate_anchors(&cfg, 1, 1);
        let a = anchors[0];
        assert!(approx(a.x_min, -8.0, 1e-12));
        assert!(approx(a.y_min, -8.0, 1e-12));
        assert!(approx(a.x_max, 24.0, 1e-12));
        assert!(approx(a.y_max, 24.0, 1e-12));
    }

    #[test]
    fn anchor_count_formula() {
        let cfg = AnchorConfig::reference();
        for &(h, w) in &[(1usize, 1usize), (3, 5), (7, 2)] {
            assert_eq!(generate_anchors(&cfg, h, w).len(), h * w * 30);
        }
    }

    #[test]
    fn anchor_grid_translation_covariance() {
        // Shifting grid indices by (di, dj) shifts anchors by exactly
        // (dj * stride, di * stride).
        let cfg = AnchorConfig::reference();
        let (h, w) = (4, 4);
        let anchors = generate_anchors(&cfg, h, w);
        let k = cfg.anchors_per_cell();
        let stride = cfg.stride() as f64;
        let (di, dj) = (2usize, 1usize);
        for i in 0..h - di {
            for j in 0..w - dj {
                for a in 0..k {
                    let base = anchors[(i * w + j) * k + a];
                    let shifted = anchors[((i + di) * w + (j + dj)) * k + a];
                    let expect = base.translate(dj as f64 * stride, di as f64 * stride);
                    assert_eq!(shifted, expect);
                }
            }
        }
    }

    #[test]
    fn empty_scales_or_ratios_rejected() {
        assert_eq!(
            AnchorConfig::new(vec![], vec![1.0], 16).unwrap_err(),
            GeometryError::BadScales
        );
        assert_eq!(
            AnchorConfig::new(vec![8.0], vec![], 16).unwrap_err(),
            GeometryError::BadRatios
        );
        assert_eq!(
            AnchorConfig::new(vec![8.0], vec![-1.0], 16).unwrap_err(),
            GeometryError::BadRatios
        );
    }

    #[test]
    fn encode_identity_is_zero_delta() {
        let b = BBox::new(3.0, 4.0, 13.0, 24.0);
        let d = encode_delta(&b, &b).unwrap();
        assert_eq!(d, BoxDelta::ZERO);
    }

    #[test]
    fn encode_hand_example() {
        let anchor = BBox::new(0.0, 0.0, 10.0, 10.0);
        let target = BBox::new(5.0, 5.0, 15.0, 15.0);
        let d = encode_delta(&anchor, &target).unwrap();
        assert!(approx(d.dx, 0.5, 1e-12));
        assert!(approx(d.dy, 0.5, 1e-12));
        assert!(approx(d.dw, 0.0, 1e-12));
        assert!(approx(d.dh, 0.0, 1e-12));
    }

    #[test]
    fn encode_rejects_degenerate_boxes() {
        let flat = BBox::new(0.0, 0.0, 10.0, 0.0);
        let ok = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert!(encode_delta(&flat, &ok).is_err());
        assert!(encode_delta(&ok, &flat).is_err());
    }

    #[test]
    fn roundtrip_1000_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let anchor = random_box(&mut rng);
            let target = random_box(&mut rng);
            let d = encode_delta(&anchor, &target).unwrap();
            let back = decode_delta(&anchor, &d, DELTA_LOG_CLAMP);
            for (a, b) in [
                (back.x_min, target.x_min),
                (back.y_min, target.y_min),
                (back.x_max, target.x_max),
                (back.y_max, target.y_max),
            ] {
                max_err = max_err.max((a - b).abs());
            }
        }
        assert!(max_err < 1e-6, "roundtrip error {max_err}");
    }

    #[test]
    fn decode_then_encode_within_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let anchor = random_box(&mut rng);
            let d = BoxDelta {
                dx: rng.gen_range(-1.0..1.0),
                dy: rng.gen_range(-1.0..1.0),
                dw: rng.gen_range(-2.0..2.0),
                dh: rng.gen_range(-2.0..2.0),
            };
            let decoded = decode_delta(&anchor, &d, DELTA_LOG_CLAMP);
            let back = encode_delta(&anchor, &decoded).unwrap();
            assert!(approx(back.dx, d.dx, 1e-6));
            assert!(approx(back.dy, d.dy, 1e-6));
            assert!(approx(back.dw, d.dw, 1e-6));
            assert!(approx(back.dh, d.dh, 1e-6));
        }
    }

    #[test]
    fn decode_clamps_extreme_log_sizes() {
        let anchor = BBox::new(0.0, 0.0, 16.0, 16.0);
        let d = BoxDelta { dx: 0.0, dy: 0.0, dw: 100.0, dh: -100.0 };
        let b = decode_delta(&anchor, &d, DELTA_LOG_CLAMP);
        assert!(approx(b.width(), 16.0 * DELTA_LOG_CLAMP.exp(), 1e-9));
        assert!(approx(b.height(), 16.0 * (-DELTA_LOG_CLAMP).exp(), 1e-9));
    }

    #[test]
    fn nms_single_box_survives() {
        let b = ScoredBox::new(BBox::new(0.0, 0.0, 10.0, 10.0), ClassLabel(0), 0.7);
        let out = nms(&[b], 0.5);
        assert_eq!(out, vec![b]);
    }

    #[test]
    fn nms_suppresses_duplicate() {
        let hi = ScoredBox::new(BBox::new(0.0, 0.0, 10.0, 10.0), ClassLabel(0), 0.9);
        let lo = ScoredBox::new(BBox::new(0.0, 0.0, 10.0, 10.0), ClassLabel(0), 0.8);
        let out = nms(&[lo, hi], 0.5);
        assert_eq!(out, vec![hi]);
    }

    #[test]
    fn nms_keeps_overlap_of_different_labels() {
        let a = ScoredBox::new(BBox::new(0.0, 0.0, 10.0, 10.0), ClassLabel(0), 0.9);
        let b = ScoredBox::new(BBox::new(0.0, 0.0, 10.0, 10.0), ClassLabel(1), 0.8);
        assert_eq!(nms(&[a, b], 0.5).len(), 2);
    }

    /// Obviously-correct reference: repeatedly keep the best remaining box
    /// and delete every same-label box overlapping it above threshold.
    fn nms_oracle(boxes: &[ScoredBox], thr: f64) -> Vec<ScoredBox> {
        let mut alive: Vec<usize> = (0..boxes.len()).collect();
        let mut kept = Vec::new();
        while !alive.is_empty() {
            let mut best = alive[0];
            for &i in &alive {
                if boxes[i].score > boxes[best].score
                    || (boxes[i].score == boxes[best].score && i < best)
                {
                    best = i;
                }
            }
            kept.push(boxes[best]);
            alive.retain(|&i| {
                i != best
                    && !(boxes[i].label == boxes[best].label
                        && iou(&boxes[i].bbox, &boxes[best].bbox) > thr)
            });
        }
        kept
    }

    #[test]
    fn nms_matches_oracle_on_small_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.gen_range(0..=10);
            let boxes: Vec<ScoredBox> = (0..n)
                .map(|_| {
                    ScoredBox::new(
                        random_box(&mut rng),
                        ClassLabel(rng.gen_range(0..3)),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect();
            let thr = rng.gen_range(0.0..1.0);
            assert_eq!(nms(&boxes, thr), nms_oracle(&boxes, thr));
        }
    }

    #[test]
    fn clip_box_examples() {
        let b = clip_box(&BBox::new(-8.0, -8.0, 24.0, 24.0), 600.0, 600.0);
        assert_eq!(b, BBox::new(0.0, 0.0, 24.0, 24.0));

        let inside = BBox::new(10.0, 20.0, 30.0, 40.0);
        assert_eq!(clip_box(&inside, 600.0, 600.0), inside);

        let b = clip_box(&BBox::new(590.0, 590.0, 700.0, 700.0), 600.0, 600.0);
        assert_eq!(b, BBox::new(590.0, 590.0, 600.0, 600.0));
    }

    #[test]
    fn label_set_lookup_roundtrip() {
        let labels = LabelSet::graphical();
        assert_eq!(labels.len(), 3);
        let table = labels.lookup("table").unwrap();
        assert_eq!(labels.name(table), Some("table"));
        assert_eq!(labels.lookup("chart"), None);
    }
}

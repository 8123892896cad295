//! Draws detections onto a page: blue for table, green for figure, red
//! for equation, 3 px outlines, score printed above the box.

use super::draw::{draw_digits, Painter};
use super::DocumentImage;
use crate::geometry::{ClassLabel, LabelSet, ScoredBox};

const OUTLINE: i64 = 3;
const FALLBACK_PALETTE: [[u8; 3]; 4] =
    [[255, 0, 255], [0, 255, 255], [255, 160, 0], [128, 0, 255]];

/// Class color per the standard convention; unknown class names rotate
/// through a fallback palette.
pub fn class_color(labels: &LabelSet, label: ClassLabel) -> [u8; 3] {
    match labels.name(label) {
        Some("table") => [0, 0, 255],
        Some("figure") => [0, 255, 0],
        Some("equation") => [255, 0, 0],
        _ => FALLBACK_PALETTE[label.index() % FALLBACK_PALETTE.len()],
    }
}

/// Returns a copy of `doc` with each detection outlined. Boxes are drawn
/// in ascending score order, so where outlines overlap the
/// highest-scoring box wins.
pub fn render_detections(
    doc: &DocumentImage,
    detections: &[ScoredBox],
    labels: &LabelSet,
) -> DocumentImage {
    let mut out = doc.clone();
    let mut order: Vec<&ScoredBox> = detections.iter().collect();
    order.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(std::cmp::Ordering::Equal));
    let mut p = Painter::new(&mut out);
    for det in order {
        let color = class_color(labels, det.label);
        let x = det.bbox.x_min.round() as i64;
        let y = det.bbox.y_min.round() as i64;
        let w = (det.bbox.x_max - det.bbox.x_min).round() as i64;
        let h = (det.bbox.y_max - det.bbox.y_min).round() as i64;
        if w < 1 || h < 1 {
            continue;
        }
        p.rect_outline(x, y, w, h, OUTLINE, color);
        let text = format!("{:.2}", det.score);
        let ty = if y >= 13 { y - 13 } else { y + OUTLINE + 2 };
        draw_digits(&mut p, x, ty, 2, &text, [0, 0, 0]);
    }
    out
}

/// Ground-truth overlay: same outlines, no score text.
pub fn render_annotations(
    doc: &DocumentImage,
    annotations: &[super::Annotation],
    labels: &LabelSet,
) -> DocumentImage {
    let mut out = doc.clone();
    let mut p = Painter::new(&mut out);
    for ann in annotations {
        let color = class_color(labels, ann.label);
        let x = ann.bbox.x_min.round() as i64;
        let y = ann.bbox.y_min.round() as i64;
        let w = (ann.bbox.x_max - ann.bbox.x_min).round() as i64;
        let h = (ann.bbox.y_max - ann.bbox.y_min).round() as i64;
        if w >= 1 && h >= 1 {
            p.rect_outline(x, y, w, h, OUTLINE, color);
        }
    }
    out
}

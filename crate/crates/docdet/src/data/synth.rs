//! Deterministic synthetic document pages with exact ground truth.
//!
//! A page is a vertical flow of light-gray body-text bars interleaved
//! with the requested graphical objects. Object ink is dark or tinted so
//! pages read like documents; ground-truth boxes are the exact pixel
//! extent of each object's ink, which the tests verify directly against
//! the rendered raster.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::draw::Painter;
use super::{AnnotatedDocument, Annotation, DataError, DocumentImage};
use crate::geometry::ClassLabel;

pub const WHITE: [u8; 3] = [255, 255, 255];

/// Class ids used by synthetic pages, matching `LabelSet::graphical()`.
pub const TABLE: ClassLabel = ClassLabel(0);
pub const FIGURE: ClassLabel = ClassLabel(1);
pub const EQUATION: ClassLabel = ClassLabel(2);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }
}

/// Style weights for tables: ruled grid, whitespace-aligned columns,
/// alternating row fill. Must sum to 1.
pub type StyleMix3 = [f64; 3];
/// Style weights for equations: single strip, fraction display.
pub type StyleMix2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub page_width: u32,
    pub page_height: u32,
    pub tables: CountRange,
    pub figures: CountRange,
    pub equations: CountRange,
    /// ruled / unruled columns / alternating fill
    pub table_style_mix: StyleMix3,
    /// axis+curve / framed panel / bar chart
    pub figure_style_mix: StyleMix3,
    /// strip / fraction
    pub equation_style_mix: StyleMix2,
    pub seed: u64,
}

impl SynthConfig {
    /// Clean-document preset: mostly ruled tables and axis figures.
    pub fn base(seed: u64) -> Self {
        Self {
            page_width: 600,
            page_height: 800,
            tables: CountRange::new(0, 2),
            figures: CountRange::new(0, 2),
            equations: CountRange::new(0, 3),
            table_style_mix: [0.6, 0.2, 0.2],
            figure_style_mix: [0.5, 0.3, 0.2],
            equation_style_mix: [0.7, 0.3],
            seed,
        }
    }

    /// Style-shifted preset for the transfer-learning experiment:
    /// alternating-fill tables and framed/bar figures dominate.
    pub fn shifted(seed: u64) -> Self {
        Self {
            table_style_mix: [0.1, 0.3, 0.6],
            figure_style_mix: [0.1, 0.5, 0.4],
            equation_style_mix: [0.3, 0.7],
            ..Self::base(seed)
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.page_width < 200 || self.page_height < 200 {
            return Err(DataError::BadSynthConfig(
                "page must be at least 200x200".into(),
            ));
        }
        for r in [&self.tables, &self.figures, &self.equations] {
            if r.min > r.max {
                return Err(DataError::BadSynthConfig(format!(
                    "count range {}..{} is inverted",
                    r.min, r.max
                )));
            }
        }
        let sums = [
            self.table_style_mix.iter().sum::<f64>(),
            self.figure_style_mix.iter().sum::<f64>(),
            self.equation_style_mix.iter().sum::<f64>(),
        ];
        for s in sums {
            if (s - 1.0).abs() > 1e-9 {
                return Err(DataError::BadSynthConfig(format!(
                    "style mix sums to {s}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::base(0)
    }
}

fn pick_style<const N: usize>(rng: &mut ChaCha8Rng, mix: &[f64; N]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in mix.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    N - 1
}

fn gray(v: u8) -> [u8; 3] {
    [v, v, v]
}

struct Element {
    label: Option<(ClassLabel, usize)>, // class and style index
    height: i64,
    width: i64,
}

/// Renders page `index` of the virtual corpus described by `cfg`.
/// A pure function of `(cfg, index)`: identical calls produce
/// byte-identical images and annotations.
pub fn synth_page(cfg: &SynthConfig, index: u64) -> Result<AnnotatedDocument, DataError> {
    cfg.validate()?;
    let mut seed_bytes = [0u8; 32];
    seed_bytes[..8].copy_from_slice(&cfg.seed.to_le_bytes());
    seed_bytes[8..16].copy_from_slice(&index.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed_bytes);

    let page_w = cfg.page_width as i64;
    let page_h = cfg.page_height as i64;
    let margin_x = rng.gen_range(36..56);
    let margin_top = rng.gen_range(28..48);
    let margin_bottom = 28;
    let content_w = page_w - 2 * margin_x;
    let content_h = page_h - margin_top - margin_bottom;

    // Clearance around every object so its 2 px ground-truth ring stays
    // blank even with body text nearby.
    let pad: i64 = 8;

    let n_tables = rng.gen_range(cfg.tables.min..=cfg.tables.max);
    let n_figures = rng.gen_range(cfg.figures.min..=cfg.figures.max);
    let n_equations = rng.gen_range(cfg.equations.min..=cfg.equations.max);

    // (class, style, min height, preferred extra height, width fraction range)
    let mut blueprints: Vec<(ClassLabel, usize, i64, i64, (f64, f64))> = Vec::new();
    for _ in 0..n_tables {
        let style = pick_style(&mut rng, &cfg.table_style_mix);
        blueprints.push((TABLE, style, 100, 130, (0.52, 0.85)));
    }
    for _ in 0..n_figures {
        let style = pick_style(&mut rng, &cfg.figure_style_mix);
        blueprints.push((FIGURE, style, 110, 140, (0.42, 0.75)));
    }
    for _ in 0..n_equations {
        let style = pick_style(&mut rng, &cfg.equation_style_mix);
        let (min_h, extra) = if style == 0 { (20, 14) } else { (34, 14) };
        blueprints.push((EQUATION, style, min_h, extra, (0.35, 0.70)));
    }

    // Deterministic placement order.
    for i in (1..blueprints.len()).rev() {
        let j = rng.gen_range(0..=i);
        blueprints.swap(i, j);
    }

    let min_needed: i64 = blueprints.iter().map(|b| b.2 + 2 * pad).sum();
    if min_needed > content_h {
        return Err(DataError::PageTooSmall {
            page_w: cfg.page_width,
            page_h: cfg.page_height,
            needed: (min_needed + margin_top + margin_bottom) as u32,
        });
    }

    // Heights get their preferred variation only as far as the page allows.
    let mut slack = content_h - min_needed;
    let mut objects: Vec<Element> = Vec::with_capacity(blueprints.len());
    for (label, style, min_h, extra, wfrac) in blueprints {
        let give = extra.min(slack);
        let grow = if give > 0 { rng.gen_range(0..=give) } else { 0 };
        slack -= grow;
        objects.push(Element {
            label: Some((label, style)),
            height: min_h + grow,
            width: (content_w as f64 * rng.gen_range(wfrac.0..wfrac.1)) as i64,
        });
    }

    let needed: i64 = objects.iter().map(|o| o.height + 2 * pad).sum();

    // Split the leftover vertical space into text blocks between objects.
    let free = content_h - needed;
    let n_gaps = objects.len() + 1;
    let mut weights: Vec<f64> = (0..n_gaps).map(|_| rng.gen_range(0.3..1.0)).collect();
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w = *w / wsum);

    let mut img = DocumentImage::blank(cfg.page_width, cfg.page_height, WHITE);
    let mut painter = Painter::new(&mut img);
    let mut annotations = Vec::new();
    let mut y = margin_top;

    for (i, obj) in objects.iter().enumerate() {
        let text_h = (free as f64 * weights[i]) as i64;
        draw_paragraph(&mut painter, &mut rng, margin_x, y, content_w, text_h - 4);
        y += text_h;

        y += pad;
        let x = margin_x + rng.gen_range(0..=(content_w - obj.width).max(1));
        let (label, style) = obj.label.expect("object element");
        painter.take_extent();
        match label {
            TABLE => draw_table(&mut painter, &mut rng, x, y, obj.width, obj.height, style),
            FIGURE => draw_figure(&mut painter, &mut rng, x, y, obj.width, obj.height, style),
            _ => draw_equation(&mut painter, &mut rng, x, y, obj.width, obj.height, style),
        }
        let bbox = painter
            .take_extent()
            .expect("object renderers always draw ink");
        annotations.push(Annotation { bbox, label });
        y += obj.height + pad;
    }
    let text_h = (free as f64 * weights[objects.len()]) as i64;
    draw_paragraph(&mut painter, &mut rng, margin_x, y, content_w, text_h - 4);

    Ok(AnnotatedDocument {
        id: format!("synth-{:05}", index),
        image: img,
        annotations,
    })
}

/// Body text rendered as light-gray bars; never part of any ground truth.
fn draw_paragraph(p: &mut Painter, rng: &mut ChaCha8Rng, x: i64, y: i64, w: i64, h: i64) {
    let mut cy = y;
    let shade = gray(rng.gen_range(150..190));
    while cy + 9 <= y + h {
        let bar_h = rng.gen_range(5..8);
        let indent = if rng.gen_bool(0.15) { rng.gen_range(10..30) } else { 0 };
        let ragged = rng.gen_range(0..w / 4);
        let bw = w - indent - ragged;
        if bw > 20 {
            p.fill_rect(x + indent, cy, bw, bar_h, shade);
        }
        cy += bar_h + rng.gen_range(4..7);
        if rng.gen_bool(0.12) {
            cy += rng.gen_range(4..10); // paragraph break
        }
    }
}

fn draw_table(p: &mut Painter, rng: &mut ChaCha8Rng, x: i64, y: i64, w: i64, h: i64, style: usize) {
    let rows = rng.gen_range(3..8).min(((h - 4) / 18).max(2));
    let cols = rng.gen_range(3..6).min(((w - 4) / 50).max(2));
    let row_h = h / rows;
    let col_w = w / cols;
    let ink = gray(rng.gen_range(20..60));
    let bar = gray(rng.gen_range(70..110));

    match style {
        0 => {
            // ruled grid with cell content bars
            p.rect_outline(x, y, w, h, 2, ink);
            for r in 1..rows {
                p.fill_rect(x, y + r * row_h, w, 1, ink);
            }
            for c in 1..cols {
                p.fill_rect(x + c * col_w, y, 1, h, ink);
            }
            for r in 0..rows {
                for c in 0..cols {
                    if rng.gen_bool(0.8) {
                        let bw = (col_w as f64 * rng.gen_range(0.4..0.8)) as i64;
                        let bh = (row_h / 3).clamp(3, 8);
                        p.fill_rect(
                            x + c * col_w + 5,
                            y + r * row_h + (row_h - bh) / 2,
                            bw.min(col_w - 8),
                            bh,
                            bar,
                        );
                    }
                }
            }
        }
        1 => {
            // whitespace-aligned columns, no rules; corner bars pin the extent
            for r in 0..rows {
                for c in 0..cols {
                    let corner = (r == 0 || r == rows - 1) && (c == 0 || c == cols - 1);
                    if !corner && !rng.gen_bool(0.85) {
                        continue;
                    }
                    let frac = if corner { 0.9 } else { rng.gen_range(0.45..0.9) };
                    let bw = ((col_w - 10) as f64 * frac) as i64;
                    let bh = rng.gen_range(5..9).min(row_h - 4);
                    let shade = if r == 0 { ink } else { bar };
                    p.fill_rect(x + c * col_w, y + r * row_h + (row_h - bh) / 2, bw, bh, shade);
                }
            }
        }
        _ => {
            // alternating row fill
            let fill = [
                rng.gen_range(200..230),
                rng.gen_range(205..235),
                rng.gen_range(215..245),
            ];
            for r in 0..rows {
                if r % 2 == 0 {
                    p.fill_rect(x, y + r * row_h, w, row_h, fill);
                }
            }
            // thin top/bottom rules keep the band block readable as a table
            p.fill_rect(x, y, w, 2, ink);
            p.fill_rect(x, y + h - 2, w, 2, ink);
            for r in 0..rows {
                for c in 0..cols {
                    if rng.gen_bool(0.85) {
                        let bw = (col_w as f64 * rng.gen_range(0.4..0.75)) as i64;
                        let bh = rng.gen_range(4..8).min(row_h - 4).max(3);
                        p.fill_rect(
                            x + c * col_w + 4,
                            y + r * row_h + (row_h - bh) / 2,
                            bw.min(col_w - 8),
                            bh,
                            bar,
                        );
                    }
                }
            }
        }
    }
}

fn draw_figure(p: &mut Painter, rng: &mut ChaCha8Rng, x: i64, y: i64, w: i64, h: i64, style: usize) {
    let ink = gray(rng.gen_range(15..55));
    match style {
        0 => {
            // shaded plot panel with axes and one or two polyline curves
            let tint = gray(rng.gen_range(232..246));
            p.fill_rect(x, y, w, h, tint);
            p.fill_rect(x, y, 2, h, ink); // y axis
            p.fill_rect(x, y + h - 2, w, 2, ink); // x axis
            for t in 1..5 {
                p.fill_rect(x, y + t * h / 5, 5, 1, ink);
                p.fill_rect(x + t * w / 5, y + h - 5, 1, 5, ink);
            }
            p.fill_rect(x + w - 10, y, 10, 4, gray(90));
            let curves = rng.gen_range(1..=2);
            for c in 0..curves {
                let color = if c == 0 { [30, 30, 130] } else { [130, 30, 30] };
                let pts = 9;
                let mut prev = (
                    x + 4,
                    y + rng.gen_range(h / 4..h - 8),
                );
                for i in 1..pts {
                    let nx = x + 4 + i * (w - 12) / (pts - 1);
                    let ny = y + rng.gen_range(4..h - 8);
                    p.line(prev.0, prev.1, nx, ny, 2, color);
                    prev = (nx, ny);
                }
            }
        }
        1 => {
            // framed panel with filled blobs
            p.rect_outline(x, y, w, h, 1, gray(100));
            let blobs = rng.gen_range(2..5);
            for _ in 0..blobs {
                let bw = rng.gen_range(w / 6..w / 2).max(8);
                let bh = rng.gen_range(h / 6..h / 2).max(8);
                let bx = x + rng.gen_range(3..(w - bw - 3).max(4));
                let by = y + rng.gen_range(3..(h - bh - 3).max(4));
                let shade = gray(rng.gen_range(60..150));
                // filled ellipse
                let (cx, cy) = (bx + bw / 2, by + bh / 2);
                for yy in by..by + bh {
                    for xx in bx..bx + bw {
                        let dx = (xx - cx) as f64 / (bw as f64 / 2.0);
                        let dy = (yy - cy) as f64 / (bh as f64 / 2.0);
                        if dx * dx + dy * dy <= 1.0 {
                            p.put(xx, yy, shade);
                        }
                    }
                }
            }
        }
        _ => {
            // bar chart on a baseline axis
            p.fill_rect(x, y + h - 2, w, 2, ink);
            p.fill_rect(x, y, 2, h, ink);
            let n = rng.gen_range(4..9);
            let slot = (w - 8) / n;
            for i in 0..n {
                let bh = rng.gen_range(h / 5..h - 4);
                let bw = (slot as f64 * 0.7) as i64;
                let shade = gray(rng.gen_range(70..130));
                p.fill_rect(x + 6 + i * slot, y + h - 2 - bh, bw, bh, shade);
            }
            // tallest bar pinned to the top so the ink extent spans h
            p.fill_rect(x + 6, y, (slot as f64 * 0.7) as i64, h - 2, gray(100));
        }
    }
}

fn draw_equation(p: &mut Painter, rng: &mut ChaCha8Rng, x: i64, y: i64, w: i64, h: i64, style: usize) {
    let ink = gray(rng.gen_range(5..45));
    match style {
        0 => {
            // one dense strip of symbol bars with superscript marks
            let base_h = (h as f64 * 0.55) as i64;
            let base_y = y + h - base_h;
            let mut cx = x;
            // leading tall symbol pins the top edge
            p.fill_rect(cx, y, rng.gen_range(3..6), h, ink);
            cx += rng.gen_range(8..14);
            while cx < x + w - 14 {
                let gw = rng.gen_range(4..16).min(x + w - cx);
                if rng.gen_bool(0.18) {
                    // equals: two stacked dashes
                    p.fill_rect(cx, base_y + base_h / 3, gw, 2, ink);
                    p.fill_rect(cx, base_y + 2 * base_h / 3, gw, 2, ink);
                } else {
                    p.fill_rect(cx, base_y, gw, base_h, ink);
                    if rng.gen_bool(0.3) {
                        p.fill_rect(cx + gw, y + (h - base_h) / 2, 4, 4, ink); // superscript
                    }
                }
                cx += gw + rng.gen_range(3..8);
            }
            // trailing symbol pins the right edge
            p.fill_rect(x + w - 5, base_y, 5, base_h, ink);
        }
        _ => {
            // fraction display: numerator and denominator around a rule
            let mid = y + h / 2;
            let frac_w = (w as f64 * rng.gen_range(0.25..0.45)) as i64;
            p.fill_rect(x, mid, frac_w, 2, ink);
            let seg_h = (h / 2 - 4).max(4);
            let mut cx = x + 4;
            while cx < x + frac_w - 8 {
                let gw = rng.gen_range(4..12);
                p.fill_rect(cx, mid - 3 - seg_h, gw, seg_h, ink);
                p.fill_rect(cx + 1, mid + 3, gw.max(3) - 1, seg_h, ink);
                cx += gw + rng.gen_range(3..7);
            }
            // right-hand side strip
            let base_h = seg_h;
            let mut cx = x + frac_w + 10;
            p.fill_rect(x + frac_w + 4, mid - 1, 4, 2, ink);
            while cx < x + w - 10 {
                let gw = rng.gen_range(4..14).min(x + w - cx);
                p.fill_rect(cx, mid - base_h / 2, gw, base_h, ink);
                cx += gw + rng.gen_range(3..8);
            }
            p.fill_rect(x + w - 5, mid - base_h / 2, 5, base_h, ink);
            // pin full height with a tall bracket at the left
            p.fill_rect(x, y, 3, h, ink);
        }
    }
}

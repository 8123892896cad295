//! Raster primitives used by page synthesis and detection rendering.
//!
//! The painter tracks the extent of every pixel it touches, which is how
//! the synthesizer derives pixel-tight ground-truth boxes.

use super::DocumentImage;
use crate::geometry::BBox;

pub struct Painter<'a> {
    img: &'a mut DocumentImage,
    extent: Option<(u32, u32, u32, u32)>,
}

impl<'a> Painter<'a> {
    pub fn new(img: &'a mut DocumentImage) -> Self {
        Self { img, extent: None }
    }

    pub fn width(&self) -> u32 {
        self.img.width
    }

    pub fn height(&self) -> u32 {
        self.img.height
    }

    /// Extent of pixels written since the last reset, as a continuous box
    /// covering the full area of the touched pixels.
    pub fn take_extent(&mut self) -> Option<BBox> {
        self.extent.take().map(|(x0, y0, x1, y1)| {
            BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64)
        })
    }

    pub fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.img.width as i64 || y >= self.img.height as i64 {
            return;
        }
        let (x, y) = (x as u32, y as u32);
        self.img.set_pixel(x, y, rgb);
        self.extent = Some(match self.extent {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, rgb: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, rgb);
            }
        }
    }

    /// Rectangle border of the given thickness, drawn inward from the
    /// outer edge.
    pub fn rect_outline(&mut self, x: i64, y: i64, w: i64, h: i64, t: i64, rgb: [u8; 3]) {
        let t = t.min(w / 2 + 1).min(h / 2 + 1).max(1);
        self.fill_rect(x, y, w, t, rgb);
        self.fill_rect(x, y + h - t, w, t, rgb);
        self.fill_rect(x, y, t, h, rgb);
        self.fill_rect(x + w - t, y, t, h, rgb);
    }

    /// Line segment rendered with a square brush of the given size.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, brush: i64, rgb: [u8; 3]) {
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.fill_rect(x, y, brush, brush, rgb);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

// 3x5 digit glyphs for score labels; bit 2 is the left column.
const GLYPHS: [(char, [u8; 5]); 11] = [
    ('0', [0b111, 0b101, 0b101, 0b101, 0b111]),
    ('1', [0b010, 0b110, 0b010, 0b010, 0b111]),
    ('2', [0b111, 0b001, 0b111, 0b100, 0b111]),
    ('3', [0b111, 0b001, 0b111, 0b001, 0b111]),
    ('4', [0b101, 0b101, 0b111, 0b001, 0b001]),
    ('5', [0b111, 0b100, 0b111, 0b001, 0b111]),
    ('6', [0b111, 0b100, 0b111, 0b101, 0b111]),
    ('7', [0b111, 0b001, 0b010, 0b010, 0b010]),
    ('8', [0b111, 0b101, 0b111, 0b101, 0b111]),
    ('9', [0b111, 0b101, 0b111, 0b001, 0b111]),
    ('.', [0b000, 0b000, 0b000, 0b000, 0b010]),
];

/// Renders digits and dots at pixel scale `s`; anything else advances the
/// cursor silently. Returns the width consumed.
pub fn draw_digits(p: &mut Painter, x: i64, y: i64, s: i64, text: &str, rgb: [u8; 3]) -> i64 {
    let mut cx = x;
    for ch in text.chars() {
        if let Some((_, rows)) = GLYPHS.iter().find(|(g, _)| *g == ch) {
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if bits & (0b100 >> rx) != 0 {
                        p.fill_rect(cx + rx as i64 * s, y + ry as i64 * s, s, s, rgb);
                    }
                }
            }
        }
        cx += 4 * s;
    }
    cx - x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DocumentImage;

    #[test]
    fn extent_tracks_touched_pixels() {
        let mut img = DocumentImage::blank(20, 20, [255, 255, 255]);
        let mut p = Painter::new(&mut img);
        assert!(p.take_extent().is_none());
        p.fill_rect(3, 4, 5, 6, [0, 0, 0]);
        let e = p.take_extent().unwrap();
        assert_eq!(e, BBox::new(3.0, 4.0, 8.0, 10.0));
        assert!(p.take_extent().is_none());
    }

    #[test]
    fn put_clips_to_image() {
        let mut img = DocumentImage::blank(4, 4, [255, 255, 255]);
        let mut p = Painter::new(&mut img);
        p.put(-1, -1, [0, 0, 0]);
        p.put(10, 10, [0, 0, 0]);
        assert!(p.take_extent().is_none());
    }

    #[test]
    fn outline_stays_within_rect() {
        let mut img = DocumentImage::blank(30, 30, [255, 255, 255]);
        let mut p = Painter::new(&mut img);
        p.rect_outline(5, 5, 10, 8, 2, [1, 2, 3]);
        let e = p.take_extent().unwrap();
        assert_eq!(e, BBox::new(5.0, 5.0, 15.0, 13.0));
        // interior untouched
        assert_eq!(img.pixel(9, 9), [255, 255, 255]);
    }
}

//! Fixed-size input preparation: bilinear resize to 600x600, [0,1] pixel
//! normalization and matching box rescale.

use super::DetectorError;
use crate::data::{AnnotatedDocument, Annotation, DocumentImage};
use crate::geometry::BBox;
use crate::numerics::Tensor;

/// Every image is resized to this square before entering the network.
pub const INPUT_SIZE: usize = 600;

/// Bilinear resize with pixel-center alignment into a [3, size, size]
/// tensor of [0,1] values, channel-major. Values are ink-positive
/// (1 = black, 0 = white) so the mostly-blank page maps to sparse
/// activations.
pub fn preprocess_image(image: &DocumentImage) -> Result<Tensor, DetectorError> {
    if image.width == 0 || image.height == 0 {
        return Err(DetectorError::BadConfig("image has a zero dimension".into()));
    }
    let size = INPUT_SIZE;
    let sx = image.width as f64 / size as f64;
    let sy = image.height as f64 / size as f64;
    let mut out = Tensor::zeros(&[3, size, size]);
    let (w, h) = (image.width as i64, image.height as i64);
    for y in 0..size {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as i64;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..size {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as i64;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let p = |xx: i64, yy: i64| {
                    1.0 - image.pixel(xx as u32, yy as u32)[c] as f64 / 255.0
                };
                let v = p(x0, y0) * (1.0 - wx) * (1.0 - wy)
                    + p(x1, y0) * wx * (1.0 - wy)
                    + p(x0, y1) * (1.0 - wx) * wy
                    + p(x1, y1) * wx * wy;
                out.set3(c, y, x, v);
            }
        }
    }
    Ok(out)
}

/// Resizes the page and rescales its ground truth into input coordinates.
pub fn preprocess(doc: &AnnotatedDocument) -> Result<(Tensor, Vec<Annotation>), DetectorError> {
    let tensor = preprocess_image(&doc.image)?;
    let fx = INPUT_SIZE as f64 / doc.image.width as f64;
    let fy = INPUT_SIZE as f64 / doc.image.height as f64;
    let annotations = doc
        .annotations
        .iter()
        .map(|a| Annotation { bbox: a.bbox.scale(fx, fy), label: a.label })
        .collect();
    Ok((tensor, annotations))
}

/// Maps a box from input coordinates back to the original image frame.
pub fn to_original_frame(bbox: &BBox, orig_w: u32, orig_h: u32) -> BBox {
    bbox.scale(
        orig_w as f64 / INPUT_SIZE as f64,
        orig_h as f64 / INPUT_SIZE as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_page, SynthConfig};
    use crate::geometry::ClassLabel;

    #[test]
    fn square_input_geometry_unchanged() {
        let mut img = DocumentImage::blank(600, 600, [255, 255, 255]);
        img.set_pixel(10, 20, [0, 0, 0]);
        let doc = AnnotatedDocument {
            id: "t".into(),
            image: img,
            annotations: vec![Annotation {
                bbox: BBox::new(10.0, 20.0, 100.0, 200.0),
                label: ClassLabel(0),
            }],
        };
        let (tensor, anns) = preprocess(&doc).unwrap();
        assert_eq!(tensor.shape(), &[3, 600, 600]);
        assert_eq!(anns[0].bbox, BBox::new(10.0, 20.0, 100.0, 200.0));
        // exact pixel carry-over on the identity resize, ink-positive
        assert_eq!(tensor.at3(0, 20, 10), 1.0);
        assert_eq!(tensor.at3(0, 0, 0), 0.0);
    }

    #[test]
    fn boxes_scale_with_the_resize() {
        let doc = AnnotatedDocument {
            id: "t".into(),
            image: DocumentImage::blank(1200, 800, [255, 255, 255]),
            annotations: vec![Annotation {
                bbox: BBox::new(0.0, 0.0, 600.0, 400.0),
                label: ClassLabel(0),
            }],
        };
        let (_, anns) = preprocess(&doc).unwrap();
        assert_eq!(anns[0].bbox, BBox::new(0.0, 0.0, 300.0, 300.0));
    }

    #[test]
    fn resize_matches_bilinear_oracle_at_probe_points() {
        let cfg = SynthConfig::base(3);
        let page = synth_page(&cfg, 0).unwrap();
        let img = &page.image;
        let t = preprocess_image(img).unwrap();
        let sx = img.width as f64 / 600.0;
        let sy = img.height as f64 / 600.0;
        for (x, y) in [(0usize, 0usize), (13, 57), (599, 599), (300, 123)] {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
            let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
            let x1 = (x0 + 1).min(img.width - 1);
            let y1 = (y0 + 1).min(img.height - 1);
            let (wx, wy) = (fx - x0 as f64, fy - y0 as f64);
            for c in 0..3 {
                let v = |xx: u32, yy: u32| 1.0 - img.pixel(xx, yy)[c] as f64 / 255.0;
                let expect = v(x0, y0) * (1.0 - wx) * (1.0 - wy)
                    + v(x1, y0) * wx * (1.0 - wy)
                    + v(x0, y1) * (1.0 - wx) * wy
                    + v(x1, y1) * wx * wy;
                assert!((t.at3(c, y, x) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_dimension_image_is_an_error() {
        let doc = AnnotatedDocument {
            id: "t".into(),
            image: DocumentImage { width: 0, height: 10, pixels: vec![] },
            annotations: vec![],
        };
        assert!(preprocess(&doc).is_err());
    }
}

//! Fixed-size RoI feature extraction from a [C, H, W] feature map.
//!
//! Two flavors: quantized max pooling (`roi_pool`) and unquantized
//! bilinear averaging (`roi_align`). Both always emit
//! [C, out_h, out_w] regardless of the RoI size. RoIs are given in
//! feature-map coordinates.

use super::RoiConfig;
use crate::geometry::BBox;
use crate::numerics::{bilinear_sample, bilinear_sample_backward, Tensor};

/// Quantized RoI pooling: the RoI snaps to the integer grid, each output
/// bin covers [floor(b*h/oh), ceil((b+1)*h/oh)) cells and yields the
/// channel-wise max. A bin that quantizes to nothing takes the nearest
/// cell's value.
pub fn roi_pool(features: &Tensor, roi: &BBox, cfg: &RoiConfig) -> Tensor {
    let (c, fh, fw) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let (oh, ow) = cfg.output_size;
    let x0 = roi.x_min.floor().clamp(0.0, (fw - 1) as f64) as usize;
    let y0 = roi.y_min.floor().clamp(0.0, (fh - 1) as f64) as usize;
    let x1 = (roi.x_max.ceil().clamp(1.0, fw as f64) as usize).max(x0 + 1);
    let y1 = (roi.y_max.ceil().clamp(1.0, fh as f64) as usize).max(y0 + 1);
    let rh = (y1 - y0) as f64;
    let rw = (x1 - x0) as f64;

    let mut out = Tensor::zeros(&[c, oh, ow]);
    for by in 0..oh {
        let hs = y0 + (rh * by as f64 / oh as f64).floor() as usize;
        let he = y0 + (rh * (by + 1) as f64 / oh as f64).ceil() as usize;
        for bx in 0..ow {
            let ws = x0 + (rw * bx as f64 / ow as f64).floor() as usize;
            let we = x0 + (rw * (bx + 1) as f64 / ow as f64).ceil() as usize;
            if hs >= he || ws >= we {
                // empty bin: nearest cell inside the roi
                let ny = hs.min(y1 - 1);
                let nx = ws.min(x1 - 1);
                for ch in 0..c {
                    out.set3(ch, by, bx, features.at3(ch, ny, nx));
                }
                continue;
            }
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                for y in hs..he.min(fh) {
                    for x in ws..we.min(fw) {
                        best = best.max(features.at3(ch, y, x));
                    }
                }
                out.set3(ch, by, bx, best);
            }
        }
    }
    out
}

/// Routes `grad_out` to the argmax cell of each pooled bin, accumulating
/// into `d_features`. The first-scanned maximum wins ties, mirroring the
/// forward scan order.
pub fn roi_pool_backward(
    features: &Tensor,
    roi: &BBox,
    cfg: &RoiConfig,
    grad_out: &Tensor,
    d_features: &mut Tensor,
) {
    let (c, fh, fw) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let (oh, ow) = cfg.output_size;
    let x0 = roi.x_min.floor().clamp(0.0, (fw - 1) as f64) as usize;
    let y0 = roi.y_min.floor().clamp(0.0, (fh - 1) as f64) as usize;
    let x1 = (roi.x_max.ceil().clamp(1.0, fw as f64) as usize).max(x0 + 1);
    let y1 = (roi.y_max.ceil().clamp(1.0, fh as f64) as usize).max(y0 + 1);
    let rh = (y1 - y0) as f64;
    let rw = (x1 - x0) as f64;

    for by in 0..oh {
        let hs = y0 + (rh * by as f64 / oh as f64).floor() as usize;
        let he = y0 + (rh * (by + 1) as f64 / oh as f64).ceil() as usize;
        for bx in 0..ow {
            let ws = x0 + (rw * bx as f64 / ow as f64).floor() as usize;
            let we = x0 + (rw * (bx + 1) as f64 / ow as f64).ceil() as usize;
            for ch in 0..c {
                let g = grad_out.at3(ch, by, bx);
                if g == 0.0 {
                    continue;
                }
                let (mut ay, mut ax);
                if hs >= he || ws >= we {
                    ay = hs.min(y1 - 1);
                    ax = ws.min(x1 - 1);
                } else {
                    let mut best = f64::NEG_INFINITY;
                    ay = hs;
                    ax = ws;
                    for y in hs..he.min(fh) {
                        for x in ws..we.min(fw) {
                            let v = features.at3(ch, y, x);
                            if v > best {
                                best = v;
                                ay = y;
                                ax = x;
                            }
                        }
                    }
                }
                ay = ay.min(fh - 1);
                ax = ax.min(fw - 1);
                let cur = d_features.at3(ch, ay, ax);
                d_features.set3(ch, ay, ax, cur + g);
            }
        }
    }
}

/// Sample position for align mode: bin (by, bx), sub-sample (iy, ix).
#[inline]
fn align_sample_pos(
    roi: &BBox,
    oh: usize,
    ow: usize,
    s: usize,
    by: usize,
    bx: usize,
    iy: usize,
    ix: usize,
) -> (f64, f64) {
    let bin_h = (roi.y_max - roi.y_min) / oh as f64;
    let bin_w = (roi.x_max - roi.x_min) / ow as f64;
    let y = roi.y_min + bin_h * (by as f64 + (iy as f64 + 0.5) / s as f64);
    let x = roi.x_min + bin_w * (bx as f64 + (ix as f64 + 0.5) / s as f64);
    // continuous box coords -> cell-center coords
    (x - 0.5, y - 0.5)
}

/// Unquantized RoI align: every bin averages `samples_per_bin`^2 bilinear
/// samples at regular sub-bin positions.
pub fn roi_align(features: &Tensor, roi: &BBox, cfg: &RoiConfig) -> Tensor {
    let c = features.shape()[0];
    let (oh, ow) = cfg.output_size;
    let s = cfg.samples_per_bin;
    let inv = 1.0 / (s * s) as f64;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for by in 0..oh {
        for bx in 0..ow {
            for iy in 0..s {
                for ix in 0..s {
                    let (x, y) = align_sample_pos(roi, oh, ow, s, by, bx, iy, ix);
                    for ch in 0..c {
                        let v = bilinear_sample(features, ch, x, y);
                        let cur = out.at3(ch, by, bx);
                        out.set3(ch, by, bx, cur + v * inv);
                    }
                }
            }
        }
    }
    out
}

/// Distributes `grad_out` back through the bilinear samples into
/// `d_features` (accumulating).
pub fn roi_align_backward(
    features: &Tensor,
    roi: &BBox,
    cfg: &RoiConfig,
    grad_out: &Tensor,
    d_features: &mut Tensor,
) {
    let c = features.shape()[0];
    let (oh, ow) = cfg.output_size;
    let s = cfg.samples_per_bin;
    let inv = 1.0 / (s * s) as f64;
    let shape = features.shape().to_vec();
    for by in 0..oh {
        for bx in 0..ow {
            for iy in 0..s {
                for ix in 0..s {
                    let (x, y) = align_sample_pos(roi, oh, ow, s, by, bx, iy, ix);
                    for ch in 0..c {
                        let g = grad_out.at3(ch, by, bx) * inv;
                        if g != 0.0 {
                            bilinear_sample_backward(&shape, ch, x, y, g, d_features);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::RoiMode;

    fn cfg(oh: usize, ow: usize, s: usize) -> RoiConfig {
        RoiConfig { mode: RoiMode::Align, output_size: (oh, ow), samples_per_bin: s }
    }

    fn ramp_4x4() -> Tensor {
        Tensor::from_vec(&[1, 4, 4], (1..=16).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn quadrant_maxima_by_hand() {
        let f = ramp_4x4();
        let out = roi_pool(&f, &BBox::new(0.0, 0.0, 4.0, 4.0), &cfg(2, 2, 1));
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn single_cell_roi_returns_that_cell() {
        let f = ramp_4x4();
        let out = roi_pool(&f, &BBox::new(2.0, 1.0, 3.0, 2.0), &cfg(1, 1, 1));
        assert_eq!(out.data(), &[7.0]); // row 1, col 2 -> 1 + 1*4 + 2 = 7
    }

    #[test]
    fn output_shape_fixed_for_any_roi() {
        let f = ramp_4x4();
        for roi in [
            BBox::new(0.0, 0.0, 1.0, 1.0),
            BBox::new(0.3, 0.7, 3.9, 2.2),
            BBox::new(1.0, 1.0, 4.0, 4.0),
        ] {
            assert_eq!(roi_pool(&f, &roi, &cfg(3, 5, 1)).shape(), &[1, 3, 5]);
            assert_eq!(roi_align(&f, &roi, &cfg(3, 5, 2)).shape(), &[1, 3, 5]);
        }
    }

    #[test]
    fn thin_roi_empty_bins_take_nearest_cell() {
        let f = ramp_4x4();
        // a 1-cell-wide roi pooled into 2x2: the second column bin is empty
        let out = roi_pool(&f, &BBox::new(1.0, 0.0, 2.0, 4.0), &cfg(2, 2, 1));
        assert_eq!(out.shape(), &[1, 2, 2]);
        for v in out.data() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn align_constant_map_gives_constant_output() {
        let f = Tensor::filled(&[2, 6, 6], 1.25);
        let out = roi_align(&f, &BBox::new(1.0, 2.0, 3.0, 4.0), &cfg(2, 2, 1));
        for v in out.data() {
            assert!((v - 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn align_detects_subcell_shift_where_pool_does_not() {
        // linear ramp along x: f(x) = x
        let mut f = Tensor::zeros(&[1, 6, 6]);
        for y in 0..6 {
            for x in 0..6 {
                f.set3(0, y, x, x as f64);
            }
        }
        let c = cfg(2, 2, 2);
        // both rois quantize to the same integer extent (cols 1..5)
        let roi_a = BBox::new(1.2, 1.0, 4.2, 4.0);
        let roi_b = BBox::new(1.6, 1.0, 4.6, 4.0);
        let a = roi_align(&f, &roi_a, &c);
        let b = roi_align(&f, &roi_b, &c);
        // expected shift of exactly 0.4 in sampled x positions
        for (va, vb) in a.data().iter().zip(b.data()) {
            assert!((vb - va - 0.4).abs() < 1e-9);
        }
        let pa = roi_pool(&f, &roi_a, &c);
        let pb = roi_pool(&f, &roi_b, &c);
        assert_eq!(pa.data(), pb.data(), "pool quantizes away the sub-cell shift");
    }

    #[test]
    fn align_gradient_matches_finite_differences() {
        use crate::numerics::finite_diff_check;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let f = Tensor::from_vec(
            &[2, 5, 5],
            (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let roi = BBox::new(0.7, 1.3, 3.9, 4.1);
        let c = cfg(2, 2, 2);
        // scalar projection of the output with fixed random coefficients
        let coef: Vec<f64> = (0..2 * 2 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coef2 = coef.clone();
        let croi = roi;
        let ccfg = c;
        let loss = move |x: &Tensor| -> f64 {
            roi_align(x, &croi, &ccfg)
                .data()
                .iter()
                .zip(&coef2)
                .map(|(v, c)| v * c)
                .sum()
        };
        let mut analytic = Tensor::zeros(f.shape());
        let gout = Tensor::from_vec(&[2, 2, 2], coef).unwrap();
        roi_align_backward(&f, &roi, &c, &gout, &mut analytic);
        let err = finite_diff_check(loss, &f, &analytic, 1e-5);
        assert!(err <= 1e-3, "max relative error {err}");
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let f = ramp_4x4();
        let c = cfg(2, 2, 1);
        let roi = BBox::new(0.0, 0.0, 4.0, 4.0);
        let gout = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut d = Tensor::zeros(f.shape());
        roi_pool_backward(&f, &roi, &c, &gout, &mut d);
        // maxima at cells 6, 8, 14, 16 (values), i.e. indices 5, 7, 13, 15
        let mut expect = vec![0.0; 16];
        expect[5] = 1.0;
        expect[7] = 2.0;
        expect[13] = 3.0;
        expect[15] = 4.0;
        assert_eq!(d.data(), &expect[..]);
    }
}

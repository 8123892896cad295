// Scratch profiling of one training step's stages. Not part of the suite.

use std::time::Instant;

use docdet::data::synth::{synth_page, SynthConfig};
use docdet::detector::backbone::{backbone_backward, backbone_forward_traced};
use docdet::detector::infer::propose;
use docdet::detector::preprocess::preprocess;
use docdet::detector::rpn::rpn_forward_traced;
use docdet::detector::train::{losses_and_grads, RoiSample, RpnSample};
use docdet::detector::{BackboneConfig, DetectorModel, ProposalConfig, RoiConfig};
use docdet::geometry::{encode_delta, generate_anchors, AnchorConfig, BBox, LabelSet};
use docdet::numerics::Tensor;

fn timeit<T>(name: &str, mut f: impl FnMut() -> T) -> T {
    let reps = 5;
    let t0 = Instant::now();
    let mut out = f();
    for _ in 1..reps {
        out = f();
    }
    println!("{name}: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    out
}

fn main() {
    let cfg = SynthConfig::base(1);
    let page = synth_page(&cfg, 0).unwrap();
    let anchor_cfg = AnchorConfig::new(
        vec![24.0, 48.0, 96.0, 192.0, 320.0, 448.0],
        vec![0.08, 0.2, 0.4, 0.7, 1.1],
        16,
    )
    .unwrap();
    let model = DetectorModel::new(
        BackboneConfig::tiny(),
        anchor_cfg.clone(),
        RoiConfig::default(),
        LabelSet::graphical(),
        42,
    )
    .unwrap();

    let (x, _) = timeit("preprocess", || preprocess(&page).unwrap());
    let bb = timeit("backbone fwd", || backbone_forward_traced(&model, &x).unwrap());
    let rpn = timeit("rpn fwd", || rpn_forward_traced(&model, &bb.features).unwrap());
    let (fh, fw) = (bb.features.shape()[1], bb.features.shape()[2]);
    let anchors = generate_anchors(&anchor_cfg, fh, fw);
    let pcfg = ProposalConfig {
        pre_nms_top_n: 1000,
        post_nms_top_n: 128,
        nms_threshold: 0.7,
        min_box_size: 4.0,
    };
    let props = timeit("propose", || {
        propose(&rpn.output, &anchors, &pcfg, (600.0, 600.0)).unwrap()
    });
    println!("  proposals: {}", props.len());

    let gt = BBox::new(100.0, 100.0, 300.0, 250.0);
    let rpn_samples: Vec<RpnSample> = (0..256)
        .map(|i| RpnSample {
            anchor: i % 30,
            row: (i / 30) % fh,
            col: i % fw,
            target: if i % 16 == 0 {
                Some(encode_delta(&anchors[(((i / 30) % fh) * fw + i % fw) * 30 + i % 30], &gt).unwrap())
            } else {
                None
            },
        })
        .collect();
    let roi_samples: Vec<RoiSample> = (0..64)
        .map(|i| {
            let b = BBox::new(
                (i * 7 % 500) as f64,
                (i * 11 % 500) as f64,
                (i * 7 % 500) as f64 + 60.0,
                (i * 11 % 500) as f64 + 40.0,
            );
            RoiSample {
                bbox: b,
                target: if i % 4 == 0 { Some((1, encode_delta(&b, &gt).unwrap())) } else { None },
            }
        })
        .collect();

    timeit("losses_and_grads (full)", || {
        losses_and_grads(&model, &x, &rpn_samples, &roi_samples).unwrap()
    });

    let d_feat = Tensor::filled(bb.features.shape(), 0.01);
    let mut grads: Vec<Tensor> = model.params()[..8]
        .iter()
        .map(|p| Tensor::zeros(p.value.shape()))
        .collect();
    timeit("backbone bwd", || {
        backbone_backward(&model.backbone, &bb, &d_feat, &mut grads).unwrap()
    });
}

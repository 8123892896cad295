// Scratch calibration probe: overfit one synthetic page and report
// per-step timing plus recovered-box IoU. Not part of the test suite.

use std::time::Instant;

use docdet::data::synth::{synth_page, CountRange, SynthConfig};
use docdet::detector::train::{train, TrainOptions};
use docdet::detector::{detect, BackboneConfig, DetectorModel, MatchConfig, ProposalConfig, RoiConfig};
use docdet::geometry::{iou, AnchorConfig, LabelSet};
use docdet::numerics::TrainHyperparams;

fn main() {
    let mut cfg = SynthConfig::base(404);
    cfg.tables = CountRange::new(1, 1);
    cfg.figures = CountRange::new(1, 1);
    cfg.equations = CountRange::new(1, 1);
    let page = synth_page(&cfg, 0).unwrap();
    println!("page objects: {}", page.annotations.len());

    let anchor_cfg = AnchorConfig::new(
        vec![56.0, 88.0, 136.0, 208.0, 312.0, 440.0],
        vec![0.04, 0.1, 0.25, 0.55, 1.0],
        16,
    )
    .unwrap();
    let mut model = DetectorModel::new(
        BackboneConfig::tiny(),
        anchor_cfg,
        RoiConfig::default(),
        LabelSet::graphical(),
        42,
    )
    .unwrap();

    let steps = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(400usize);
    let opts = TrainOptions {
        hp: TrainHyperparams {
            batch_size: 2,
            learning_rate: std::env::args()
                .nth(1)
                .and_then(|s| s.parse().ok())
                .unwrap_or(0.02),
            decay_every_epochs: 300,
            ..Default::default()
        },
        epochs: steps,
        match_cfg: MatchConfig::default(),
        proposal_cfg: ProposalConfig {
            pre_nms_top_n: 1000,
            post_nms_top_n: 128,
            nms_threshold: 0.7,
            min_box_size: 4.0,
        },
        seed: 7,
        checkpoint_dir: None,
    };
    let docs = vec![page.clone(), page.clone()];
    let t0 = Instant::now();
    let trace = train(&mut model, &docs, &opts).unwrap();
    let dt = t0.elapsed();
    println!(
        "{} steps in {:.1}s ({:.0} ms/step); loss {:.3} -> {:.3}",
        steps,
        dt.as_secs_f64(),
        dt.as_secs_f64() * 1000.0 / steps as f64,
        trace.first().unwrap().total,
        trace.last().unwrap().total,
    );
    for (i, t) in trace.iter().enumerate() {
        if i % 50 == 0 || i == trace.len() - 1 {
            println!(
                "  step {:3}: lr {:.5} rpn_cls {:.3} rpn_reg {:.3} head_cls {:.3} head_reg {:.3}",
                i, t.lr, t.rpn_cls, t.rpn_reg, t.head_cls, t.head_reg
            );
        }
    }

    let t1 = Instant::now();
    let dets = detect(&model, &page.image, 0.3, 0.25).unwrap();
    println!("detect: {} boxes in {:.0} ms", dets.len(), t1.elapsed().as_secs_f64() * 1000.0);
    for gt in &page.annotations {
        let best = dets
            .iter()
            .filter(|d| d.label == gt.label)
            .map(|d| iou(&d.bbox, &gt.bbox))
            .fold(0.0f64, f64::max);
        println!("  gt label {:?}: best IoU {:.3}", gt.label, best);
    }
}

// Scratch diagnostic: after overfitting one page, inspect each pipeline
// stage (anchor assignment, proposal quality, head response on clean
// boxes). Not part of the test suite.

use docdet::data::synth::{synth_page, CountRange, SynthConfig};
use docdet::detector::assign::{assign_anchor_labels, AnchorAssignment};
use docdet::detector::backbone::backbone_forward;
use docdet::detector::head::detection_head;
use docdet::detector::infer::{extract_roi_features, propose};
use docdet::detector::preprocess::preprocess;
use docdet::detector::rpn::rpn_forward;
use docdet::detector::train::{train, TrainOptions};
use docdet::detector::{BackboneConfig, DetectorModel, MatchConfig, ProposalConfig, RoiConfig};
use docdet::geometry::{generate_anchors, iou, AnchorConfig, LabelSet};
use docdet::numerics::{softmax, TrainHyperparams};

fn main() {
    let mut cfg = SynthConfig::base(404);
    cfg.tables = CountRange::new(1, 1);
    cfg.figures = CountRange::new(1, 1);
    cfg.equations = CountRange::new(1, 1);
    let page = synth_page(&cfg, 0).unwrap();

    let anchor_cfg = AnchorConfig::new(
        vec![56.0, 88.0, 136.0, 208.0, 312.0, 440.0],
        vec![0.04, 0.1, 0.25, 0.55, 1.0],
        16,
    )
    .unwrap();
    let mut model = DetectorModel::new(
        BackboneConfig::tiny(),
        anchor_cfg.clone(),
        RoiConfig::default(),
        LabelSet::graphical(),
        42,
    )
    .unwrap();

    let (x, gts) = preprocess(&page).unwrap();
    let features = backbone_forward(&model, &x).unwrap();
    let (fh, fw) = (features.shape()[1], features.shape()[2]);
    let anchors = generate_anchors(&anchor_cfg, fh, fw);
    let gt_boxes: Vec<_> = gts.iter().map(|a| a.bbox).collect();
    let assigns = assign_anchor_labels(&anchors, &gt_boxes, &MatchConfig::default());
    let n_pos = assigns
        .iter()
        .filter(|a| matches!(a, AnchorAssignment::Positive { .. }))
        .count();
    println!("anchors {} positives {}", anchors.len(), n_pos);
    for (i, g) in gt_boxes.iter().enumerate() {
        let best = anchors.iter().map(|a| iou(a, g)).fold(0.0f64, f64::max);
        println!(
            "  gt{i} {:?} label {:?} best-anchor IoU {:.3}",
            (g.x_min as i32, g.y_min as i32, g.x_max as i32, g.y_max as i32),
            gts[i].label,
            best
        );
    }

    let opts = TrainOptions {
        hp: TrainHyperparams {
            batch_size: 2,
            learning_rate: 0.05,
            decay_every_epochs: 300,
            ..Default::default()
        },
        epochs: 400,
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
    let trace = train(&mut model, &docs, &opts).unwrap();
    println!("final loss {:.3}", trace.last().unwrap().total);

    // proposals after training
    let features = backbone_forward(&model, &x).unwrap();
    let rpn_out = rpn_forward(&model, &features).unwrap();
    let props = propose(&rpn_out, &anchors, &ProposalConfig::default(), (600.0, 600.0)).unwrap();
    println!("proposals: {}", props.len());
    for (i, g) in gt_boxes.iter().enumerate() {
        let mut best = 0.0f64;
        let mut best_rank = usize::MAX;
        for (r, p) in props.iter().enumerate() {
            let ov = iou(&p.bbox, g);
            if ov > best {
                best = ov;
                best_rank = r;
            }
        }
        println!("  gt{i}: best proposal IoU {best:.3} at rank {best_rank}");
    }
    for p in props.iter().take(5) {
        println!(
            "  top prop score {:.3} box ({:.0},{:.0},{:.0},{:.0})",
            p.score, p.bbox.x_min, p.bbox.y_min, p.bbox.x_max, p.bbox.y_max
        );
    }

    // head response when fed the exact gt boxes
    for (i, ann) in gts.iter().enumerate() {
        let rf = extract_roi_features(&model, &features, &ann.bbox);
        let out = detection_head(&model, &rf).unwrap();
        let probs = softmax(&out.cls_logits);
        println!(
            "  head on gt{i} (label {:?}): probs {:?}",
            ann.label,
            probs
                .data()
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
    }
}

// Scratch: evaluate saved probe checkpoints at several epochs/NMS
// settings. Not part of the test suite.

use docdet::data::synth::{synth_page, SynthConfig};
use docdet::data::AnnotatedDocument;
use docdet::detector::{detect, BackboneConfig, DetectorModel, RoiConfig};
use docdet::eval::{evaluate, GroundTruthSet, PredictionSet};
use docdet::geometry::{AnchorConfig, LabelSet, ScoredBox};
use rayon::prelude::*;

fn corpus(cfg: &SynthConfig, n: u64) -> Vec<AnnotatedDocument> {
    (0..n).into_par_iter().map(|i| synth_page(cfg, i).unwrap()).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = &args[1];
    let nms: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.25);

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
        0,
    )
    .unwrap();
    model.load_checkpoint(std::path::Path::new(ckpt), false).unwrap();

    let test_docs = corpus(&SynthConfig::base(42), 100);
    let dets: Vec<(String, Vec<ScoredBox>)> = test_docs
        .par_iter()
        .map(|d| (d.id.clone(), detect(&model, &d.image, 0.05, nms).unwrap()))
        .collect();
    let mut preds = PredictionSet::default();
    let mut gts = GroundTruthSet::new(LabelSet::graphical());
    for d in &test_docs {
        gts.by_image.entry(d.id.clone()).or_default();
        for a in &d.annotations {
            gts.insert(d.id.clone(), a.bbox, a.label);
        }
    }
    for (id, ds) in dets {
        for d in ds {
            preds.insert(id.clone(), d);
        }
    }
    for iou_thr in [0.5] {
        let r = evaluate(&preds, &gts, iou_thr).unwrap();
        println!("{ckpt} nms={nms}: mAP@{iou_thr} = {:.3} aveF1 = {:.3}", r.map, r.ave_f1);
    }
}

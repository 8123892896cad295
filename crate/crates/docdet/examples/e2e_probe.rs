// Scratch calibration for the desk-scale end-to-end run: synthesize
// corpora, train, evaluate mAP@0.5, and compare fine-tuning against
// from-scratch training on a style-shifted corpus. Not part of the suite.

use std::time::Instant;

use docdet::data::synth::{synth_page, SynthConfig};
use docdet::data::AnnotatedDocument;
use docdet::detector::train::{fine_tune, train, TrainOptions};
use docdet::detector::{
    detect, BackboneConfig, DetectorModel, MatchConfig, ProposalConfig, RoiConfig,
};
use docdet::eval::{evaluate, GroundTruthSet, PredictionSet};
use docdet::geometry::{AnchorConfig, LabelSet};
use docdet::numerics::TrainHyperparams;
use rayon::prelude::*;

fn corpus(cfg: &SynthConfig, n: u64) -> Vec<AnnotatedDocument> {
    (0..n)
        .into_par_iter()
        .map(|i| synth_page(cfg, i).unwrap())
        .collect()
}

fn anchor_cfg() -> AnchorConfig {
    AnchorConfig::new(
        vec![56.0, 88.0, 136.0, 208.0, 312.0, 440.0],
        vec![0.04, 0.1, 0.25, 0.55, 1.0],
        16,
    )
    .unwrap()
}

fn eval_map(model: &DetectorModel, docs: &[AnnotatedDocument], tag: &str) -> f64 {
    eval_map_nms(model, docs, tag, 0.3)
}

fn eval_map_nms(model: &DetectorModel, docs: &[AnnotatedDocument], tag: &str, nms: f64) -> f64 {
    let t0 = Instant::now();
    let dets: Vec<_> = docs
        .par_iter()
        .map(|d| (d.id.clone(), detect(model, &d.image, 0.05, nms).unwrap()))
        .collect();
    let mut preds = PredictionSet::default();
    let mut gts = GroundTruthSet::new(LabelSet::graphical());
    for d in docs {
        gts.by_image.insert(d.id.clone(), vec![]);
        for a in &d.annotations {
            gts.insert(d.id.clone(), a.bbox, a.label);
        }
    }
    for (id, ds) in &dets {
        for d in ds {
            preds.insert(id.clone(), *d);
        }
    }
    let report = evaluate(&preds, &gts, 0.5).unwrap();
    let loose = evaluate(&preds, &gts, 0.3).unwrap();
    let strict = evaluate(&preds, &gts, 0.7).unwrap();
    println!(
        "{tag}: mAP@0.3/0.5/0.7 = {:.3}/{:.3}/{:.3} aveF1 = {:.3} ({:.0}s)\n{}",
        loose.map,
        report.map,
        strict.map,
        report.ave_f1,
        t0.elapsed().as_secs_f64(),
        report.render_table()
    );

    // FP anatomy at cutoff 0.5: same-class near-miss / duplicate,
    // cross-class hit, or pure background
    let gt_by_id: std::collections::BTreeMap<&str, &AnnotatedDocument> =
        docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut same_class_near = 0usize; // 0.1 <= IoU < 0.5 with same-class gt
    let mut duplicate = 0usize; // IoU >= 0.5 with same-class gt (lost the match)
    let mut cross_class = 0usize; // IoU >= 0.5 with an other-class gt
    let mut background = 0usize;
    for (id, ds) in &dets {
        let doc = gt_by_id[id.as_str()];
        for d in ds.iter().filter(|d| d.score >= 0.5) {
            let same = doc
                .annotations
                .iter()
                .filter(|a| a.label == d.label)
                .map(|a| docdet::geometry::iou(&a.bbox, &d.bbox))
                .fold(0.0f64, f64::max);
            let other = doc
                .annotations
                .iter()
                .filter(|a| a.label != d.label)
                .map(|a| docdet::geometry::iou(&a.bbox, &d.bbox))
                .fold(0.0f64, f64::max);
            if same >= 0.5 {
                duplicate += 1; // counted TP or dup; dominated by TPs
            } else if other >= 0.5 {
                cross_class += 1;
            } else if same >= 0.1 {
                same_class_near += 1;
            } else {
                background += 1;
            }
        }
    }
    println!(
        "{tag} detections>=0.5 anatomy: matched-or-dup {duplicate}, near-miss {same_class_near}, cross-class {cross_class}, background {background}"
    );
    report.map
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let n_train: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);
    let decay_every: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5);

    let t0 = Instant::now();
    let train_docs = corpus(&SynthConfig::base(41), n_train);
    let test_docs = corpus(&SynthConfig::base(42), 100);
    println!("synth: {:.0}s", t0.elapsed().as_secs_f64());

    let mut model = DetectorModel::new(
        BackboneConfig::tiny(),
        anchor_cfg(),
        RoiConfig::default(),
        LabelSet::graphical(),
        12345,
    )
    .unwrap();
    let opts = TrainOptions {
        hp: TrainHyperparams {
            learning_rate: lr,
            decay_every_epochs: decay_every,
            ..Default::default()
        },
        epochs,
        match_cfg: MatchConfig { head_batch: 96, ..MatchConfig::default() },
        proposal_cfg: ProposalConfig {
            pre_nms_top_n: 1000,
            post_nms_top_n: 200,
            nms_threshold: 0.7,
            min_box_size: 4.0,
        },
        seed: 99,
        checkpoint_dir: Some(std::env::temp_dir().join("docdet-e2e-probe")),
    };
    let t1 = Instant::now();
    let trace = train(&mut model, &train_docs, &opts).unwrap();
    println!(
        "train {} epochs in {:.0}s; loss {:.3} -> {:.3}",
        epochs,
        t1.elapsed().as_secs_f64(),
        trace[0].total,
        trace.last().unwrap().total
    );
    for t in &trace {
        println!(
            "  ep {:2} lr {:.4} rpn_cls {:.3} rpn_reg {:.3} head_cls {:.3} head_reg {:.3}",
            t.epoch, t.lr, t.rpn_cls, t.rpn_reg, t.head_cls, t.head_reg
        );
    }
    eval_map(&model, &test_docs, "base-test");
    for nms in [0.15, 0.25, 0.4] {
        eval_map_nms(&model, &test_docs, &format!("base-test nms={nms}"), nms);
    }

    // transfer experiment on the style-shifted corpus
    let shifted_train = corpus(&SynthConfig::shifted(43), 60);
    let shifted_test = corpus(&SynthConfig::shifted(44), 50);
    let ckpt = std::env::temp_dir()
        .join("docdet-e2e-probe")
        .join(format!("epoch_{:03}.ckpt", epochs - 1));

    let ft_opts = TrainOptions {
        hp: TrainHyperparams { learning_rate: lr / 5.0, ..Default::default() },
        epochs: 4,
        seed: 7,
        checkpoint_dir: None,
        ..opts.clone()
    };
    let mut ft_model = DetectorModel::new(
        BackboneConfig::tiny(),
        anchor_cfg(),
        RoiConfig::default(),
        LabelSet::graphical(),
        555,
    )
    .unwrap();
    let t2 = Instant::now();
    let (_, reinit) = fine_tune(&mut ft_model, &ckpt, &shifted_train, &ft_opts).unwrap();
    println!("fine-tune 4 epochs in {:.0}s (head reinit: {reinit})", t2.elapsed().as_secs_f64());
    let ft_map = eval_map(&ft_model, &shifted_test, "shifted-finetuned");

    let scratch_opts = TrainOptions {
        hp: TrainHyperparams { learning_rate: lr, ..Default::default() },
        epochs: 4,
        seed: 7,
        checkpoint_dir: None,
        ..opts.clone()
    };
    let mut scratch = DetectorModel::new(
        BackboneConfig::tiny(),
        anchor_cfg(),
        RoiConfig::default(),
        LabelSet::graphical(),
        555,
    )
    .unwrap();
    let _ = train(&mut scratch, &shifted_train, &scratch_opts).unwrap();
    let sc_map = eval_map(&scratch, &shifted_test, "shifted-scratch");

    println!(
        "total {:.0}s; finetuned {:.3} vs scratch {:.3} => {}",
        t0.elapsed().as_secs_f64(),
        ft_map,
        sc_map,
        if ft_map > sc_map { "PASS" } else { "FAIL" }
    );
}

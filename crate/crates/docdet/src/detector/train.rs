//! SGD training and fine-tuning of the detector.
//!
//! The loss is the unit-weighted sum of four terms: RPN objectness
//! cross-entropy and smooth-L1 box regression over a sampled anchor
//! batch, plus head classification cross-entropy and smooth-L1 regression
//! over a sampled RoI batch. Regression terms are averaged over positive
//! samples. Proposal coordinates feeding the head are treated as
//! constants (approximate joint training); gradients flow into the RPN
//! only through its own two loss terms.
//!
//! Training is deterministic given the seed: every random draw comes from
//! ChaCha streams derived before any parallel fan-out, and parallel batch
//! gradients are reduced in image order.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assign::{assign_anchor_labels, assign_roi_labels, AnchorAssignment, RoiAssignment};
use super::backbone::{backbone_backward, backbone_forward_traced};
use super::head::{detection_head_traced, head_backward};
use super::infer::propose;
use super::preprocess::{preprocess, INPUT_SIZE};
use super::roi::{roi_align, roi_align_backward, roi_pool, roi_pool_backward};
use super::rpn::{rpn_backward, rpn_forward_traced};
use super::{DetectorError, DetectorModel, MatchConfig, ProposalConfig, RoiMode};
use crate::data::AnnotatedDocument;
use crate::geometry::{generate_anchors, BBox, BoxDelta, ClassLabel};
use crate::numerics::{
    lr_schedule, sgd_step, smooth_l1, smooth_l1_backward, softmax_cross_entropy,
    softmax_cross_entropy_backward, Tensor, TrainHyperparams,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub head_cls: f64,
    pub head_reg: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.rpn_cls + self.rpn_reg + self.head_cls + self.head_reg
    }

    fn add(&mut self, other: &LossParts) {
        self.rpn_cls += other.rpn_cls;
        self.rpn_reg += other.rpn_reg;
        self.head_cls += other.head_cls;
        self.head_reg += other.head_reg;
    }

    fn scale(&mut self, f: f64) {
        self.rpn_cls *= f;
        self.rpn_reg *= f;
        self.head_cls *= f;
        self.head_reg *= f;
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub head_cls: f64,
    pub head_reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub hp: TrainHyperparams,
    pub epochs: usize,
    pub match_cfg: MatchConfig,
    /// Proposal budget used when mining head RoIs during training.
    pub proposal_cfg: ProposalConfig,
    pub seed: u64,
    /// When set, a checkpoint is written here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            hp: TrainHyperparams::default(),
            epochs: 10,
            match_cfg: MatchConfig::default(),
            proposal_cfg: ProposalConfig {
                pre_nms_top_n: 1000,
                post_nms_top_n: 200,
                nms_threshold: 0.7,
                min_box_size: 4.0,
            },
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

/// Transition scale of the box-regression loss per component
/// (dx, dy, dw, dh). The loss is sigma * smooth_l1(residual / sigma):
/// identical to plain smooth-L1 for large residuals (gradient bounded by
/// 1) but with a quadratic zone narrowed to |residual| < sigma, so
/// refinement pressure near the target is an order of magnitude stronger.
/// Raw deltas are ~0.1-scale and vanish against the classification terms
/// otherwise.
pub const DELTA_SIGMA: [f64; 4] = [0.1, 0.1, 0.2, 0.2];

/// Componentwise scaled smooth-L1: returns the summed loss and the
/// gradient w.r.t. each predicted delta (each in [-1, 1]).
fn reg_residual_loss(pred: &[f64], target: &BoxDelta) -> (f64, [f64; 4]) {
    let residual = [
        pred[0] - target.dx,
        pred[1] - target.dy,
        pred[2] - target.dw,
        pred[3] - target.dh,
    ];
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for c in 0..4 {
        let scaled = Tensor::scalar(residual[c] / DELTA_SIGMA[c]);
        loss += DELTA_SIGMA[c] * smooth_l1(&scaled);
        grad[c] = smooth_l1_backward(&scaled).data()[0];
    }
    (loss, grad)
}

/// Gradient accumulator aligned with `DetectorModel::params_mut()` order:
/// backbone (weight, bias) pairs, then the three RPN convs, then the
/// three head linears.
pub struct GradSet {
    pub slots: Vec<Tensor>,
    n_backbone: usize,
}

impl GradSet {
    pub fn new_like(model: &DetectorModel) -> Self {
        let slots = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        Self { slots, n_backbone: model.backbone.len() * 2 }
    }

    fn backbone(&mut self) -> &mut [Tensor] {
        let n = self.n_backbone;
        &mut self.slots[..n]
    }

    fn rpn(&mut self) -> &mut [Tensor] {
        let n = self.n_backbone;
        &mut self.slots[n..n + 6]
    }

    fn head(&mut self) -> &mut [Tensor] {
        let n = self.n_backbone;
        &mut self.slots[n + 6..n + 14]
    }

    fn add(&mut self, other: &GradSet) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.add_assign(b);
        }
    }

    fn scale(&mut self, f: f64) {
        for t in &mut self.slots {
            t.scale_assign(f);
        }
    }
}

/// An anchor slot entering the RPN loss: grid position plus regression
/// target (None for background samples).
#[derive(Debug, Clone, Copy)]
pub struct RpnSample {
    pub anchor: usize,
    pub row: usize,
    pub col: usize,
    pub target: Option<BoxDelta>,
}

/// A candidate box entering the head loss, in input-image coordinates.
/// Foreground targets carry the 1-based class id (0 is background) and
/// the encoded regression target.
#[derive(Debug, Clone, Copy)]
pub struct RoiSample {
    pub bbox: BBox,
    pub target: Option<(usize, BoxDelta)>,
}

/// Computes the four loss terms and the full parameter gradient for one
/// preprocessed image with fixed sample sets. This is the differentiable
/// core shared by the training step and the end-to-end gradient check.
pub fn losses_and_grads(
    model: &DetectorModel,
    x: &Tensor,
    rpn_samples: &[RpnSample],
    roi_samples: &[RoiSample],
) -> Result<(LossParts, GradSet), DetectorError> {
    let bb = backbone_forward_traced(model, x)?;
    let rpn = rpn_forward_traced(model, &bb.features)?;
    losses_and_grads_traced(model, &bb, &rpn, rpn_samples, roi_samples)
}

fn losses_and_grads_traced(
    model: &DetectorModel,
    bb: &super::backbone::BackboneTrace,
    rpn: &super::rpn::RpnTrace,
    rpn_samples: &[RpnSample],
    roi_samples: &[RoiSample],
) -> Result<(LossParts, GradSet), DetectorError> {
    let features = &bb.features;
    let (h, w) = (features.shape()[1], features.shape()[2]);

    let mut grads = GradSet::new_like(model);
    let mut d_features = Tensor::zeros(features.shape());
    let mut loss = LossParts::default();

    // RPN objectness + regression over the sampled anchors
    let mut d_scores = Tensor::zeros(rpn.output.scores.shape());
    let mut d_deltas = Tensor::zeros(rpn.output.deltas.shape());
    let n_rpn = rpn_samples.len().max(1) as f64;
    let n_pos = rpn_samples.iter().filter(|s| s.target.is_some()).count().max(1) as f64;
    for s in rpn_samples {
        let off = ((s.anchor * h + s.row) * w + s.col) * 2;
        let logits = Tensor::from_vec(
            &[2],
            vec![
                rpn.output.scores.data()[off],
                rpn.output.scores.data()[off + 1],
            ],
        )
        .expect("2 logits");
        let target_class = usize::from(s.target.is_some());
        let (ce, probs) = softmax_cross_entropy(&logits, target_class)?;
        loss.rpn_cls += ce / n_rpn;
        let dl = softmax_cross_entropy_backward(&probs, target_class);
        d_scores.data_mut()[off] += dl.data()[0] / n_rpn;
        d_scores.data_mut()[off + 1] += dl.data()[1] / n_rpn;

        if let Some(target) = s.target {
            let doff = ((s.anchor * h + s.row) * w + s.col) * 4;
            let pred = &rpn.output.deltas.data()[doff..doff + 4];
            let (l, grad) = reg_residual_loss(pred, &target);
            loss.rpn_reg += l / n_pos;
            for c in 0..4 {
                d_deltas.data_mut()[doff + c] += grad[c] / n_pos;
            }
        }
    }
    let d_feat_rpn = rpn_backward(model, features, rpn, &d_scores, &d_deltas, grads.rpn())?;
    d_features.add_assign(&d_feat_rpn);

    // head classification + regression over the sampled RoIs
    let stride = model.anchor_cfg.stride() as f64;
    let n_roi = roi_samples.len().max(1) as f64;
    let n_fg = roi_samples.iter().filter(|s| s.target.is_some()).count().max(1) as f64;
    let n_slots = model.num_classes() + 1;
    for s in roi_samples {
        let roi = s.bbox.scale(1.0 / stride, 1.0 / stride);
        let roi_feat = match model.roi_cfg.mode {
            RoiMode::Align => roi_align(features, &roi, &model.roi_cfg),
            RoiMode::Pool => roi_pool(features, &roi, &model.roi_cfg),
        };
        let trace = detection_head_traced(model, &roi_feat)?;
        let target_class = s.target.map_or(0, |(c, _)| c);
        let (ce, probs) = softmax_cross_entropy(&trace.output.cls_logits, target_class)?;
        loss.head_cls += ce / n_roi;
        let mut d_cls = softmax_cross_entropy_backward(&probs, target_class);
        d_cls.scale_assign(1.0 / n_roi);

        let mut d_reg = Tensor::zeros(&[4 * n_slots]);
        if let Some((class, target)) = s.target {
            let off = 4 * class;
            let pred = &trace.output.reg.data()[off..off + 4];
            let (l, grad) = reg_residual_loss(pred, &target);
            loss.head_reg += l / n_fg;
            for c in 0..4 {
                d_reg.data_mut()[off + c] = grad[c] / n_fg;
            }
        }

        let d_roi_feat = head_backward(
            model,
            &trace,
            &d_cls,
            &d_reg,
            grads.head(),
            roi_feat.shape(),
        )?;
        match model.roi_cfg.mode {
            RoiMode::Align => {
                roi_align_backward(features, &roi, &model.roi_cfg, &d_roi_feat, &mut d_features)
            }
            RoiMode::Pool => {
                roi_pool_backward(features, &roi, &model.roi_cfg, &d_roi_feat, &mut d_features)
            }
        }
    }

    backbone_backward(&model.backbone, bb, &d_features, grads.backbone())?;
    Ok((loss, grads))
}

/// Assignment work that does not depend on model parameters, done once
/// per image and reused every epoch.
struct ImageCache {
    gt_boxes: Vec<BBox>,
    gt_labeled: Vec<(BBox, ClassLabel)>,
    assignments: Vec<AnchorAssignment>,
}

fn sample_rpn(
    cache: &ImageCache,
    cfg: &MatchConfig,
    k: usize,
    w: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<RpnSample> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (idx, a) in cache.assignments.iter().enumerate() {
        match a {
            AnchorAssignment::Positive { .. } => positives.push(idx),
            AnchorAssignment::Negative => negatives.push(idx),
            AnchorAssignment::Ignore => {}
        }
    }
    positives.shuffle(rng);
    negatives.shuffle(rng);
    let n_pos = positives
        .len()
        .min((cfg.rpn_batch as f64 * cfg.positive_fraction) as usize);
    let n_neg = negatives.len().min(cfg.rpn_batch - n_pos);

    let to_sample = |idx: usize, target: Option<BoxDelta>| {
        let a = idx % k;
        let cell = idx / k;
        RpnSample { anchor: a, row: cell / w, col: cell % w, target }
    };
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for &idx in positives.iter().take(n_pos) {
        if let AnchorAssignment::Positive { delta, .. } = cache.assignments[idx] {
            out.push(to_sample(idx, Some(delta)));
        }
    }
    for &idx in negatives.iter().take(n_neg) {
        out.push(to_sample(idx, None));
    }
    out
}

/// Random page-sized candidate boxes mixed into the head pool so body
/// text and margins show up among the background samples even when the
/// RPN concentrates its proposals on objects.
const RANDOM_ROI_CANDIDATES: usize = 16;

fn sample_rois(
    model: &DetectorModel,
    cache: &ImageCache,
    proposals: &[BBox],
    cfg: &MatchConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<RoiSample> {
    // ground-truth boxes join the candidate pool so the head always sees
    // clean foreground examples even while the RPN is still poor, and
    // jittered copies give the regression output non-trivial targets
    let size = INPUT_SIZE as f64;
    let mut candidates: Vec<BBox> = proposals.to_vec();
    candidates.extend(cache.gt_boxes.iter().copied());
    for gt in &cache.gt_boxes {
        let (w, h) = (gt.width(), gt.height());
        let (cx, cy) = gt.center();
        // near misses become foreground with non-trivial regression targets
        for _ in 0..3 {
            let jb = BBox::from_center_size(
                cx + rng.gen_range(-0.12..0.12) * w,
                cy + rng.gen_range(-0.12..0.12) * h,
                w * rng.gen_range(0.85..1.18),
                h * rng.gen_range(0.85..1.18),
            );
            candidates.push(crate::geometry::clip_box(&jb, size, size));
        }
        // partial crops and offset boxes land below the foreground IoU and
        // teach the head that fragments of an object are background
        for _ in 0..3 {
            let jb = BBox::from_center_size(
                cx + rng.gen_range(-0.45..0.45) * w,
                cy + rng.gen_range(-0.45..0.45) * h,
                w * rng.gen_range(0.45..0.85),
                h * rng.gen_range(0.45..0.85),
            );
            candidates.push(crate::geometry::clip_box(&jb, size, size));
        }
    }
    for _ in 0..RANDOM_ROI_CANDIDATES {
        let w = rng.gen_range(40.0..420.0);
        let h = rng.gen_range(12.0..320.0);
        let x = rng.gen_range(0.0..(size - w));
        let y = rng.gen_range(0.0..(size - h));
        candidates.push(BBox::new(x, y, x + w, y + h));
    }
    let assigned = assign_roi_labels(&candidates, &cache.gt_labeled, cfg);

    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (i, a) in assigned.iter().enumerate() {
        match a {
            RoiAssignment::Foreground { .. } => fg.push(i),
            RoiAssignment::Background => bg.push(i),
        }
    }
    fg.shuffle(rng);
    bg.shuffle(rng);
    let n_fg = fg.len().min((cfg.head_batch as f64 * cfg.positive_fraction) as usize);
    let n_bg = bg.len().min(cfg.head_batch - n_fg);

    let _ = model;
    let mut out = Vec::with_capacity(n_fg + n_bg);
    for &i in fg.iter().take(n_fg) {
        if let RoiAssignment::Foreground { label, delta } = assigned[i] {
            out.push(RoiSample {
                bbox: candidates[i],
                target: Some((label.index() + 1, delta)),
            });
        }
    }
    for &i in bg.iter().take(n_bg) {
        out.push(RoiSample { bbox: candidates[i], target: None });
    }
    out
}

fn train_step(
    model: &DetectorModel,
    doc: &AnnotatedDocument,
    cache: &ImageCache,
    anchors_len: usize,
    opts: &TrainOptions,
    step_seed: u64,
) -> Result<(LossParts, GradSet), DetectorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
    let (x, _) = preprocess(doc)?;
    let bb = backbone_forward_traced(model, &x)?;
    let (fh, fw) = (bb.features.shape()[1], bb.features.shape()[2]);
    debug_assert_eq!(anchors_len, fh * fw * model.anchor_cfg.anchors_per_cell());

    let k = model.anchor_cfg.anchors_per_cell();
    let rpn_samples = sample_rpn(cache, &opts.match_cfg, k, fw, &mut rng);

    let rpn_out = rpn_forward_traced(model, &bb.features)?;
    let anchors = generate_anchors(&model.anchor_cfg, fh, fw);
    let size = INPUT_SIZE as f64;
    let proposals: Vec<BBox> = propose(&rpn_out.output, &anchors, &opts.proposal_cfg, (size, size))?
        .into_iter()
        .map(|p| p.bbox)
        .collect();
    let roi_samples = sample_rois(model, cache, &proposals, &opts.match_cfg, &mut rng);

    losses_and_grads_traced(model, &bb, &rpn_out, &rpn_samples, &roi_samples)
}

fn build_caches(
    model: &DetectorModel,
    docs: &[AnnotatedDocument],
    opts: &TrainOptions,
) -> Result<Vec<ImageCache>, DetectorError> {
    let (fh, fw) = model.backbone_cfg.feature_size(INPUT_SIZE);
    let anchors = generate_anchors(&model.anchor_cfg, fh, fw);
    docs.par_iter()
        .map(|doc| {
            let fx = INPUT_SIZE as f64 / doc.image.width as f64;
            let fy = INPUT_SIZE as f64 / doc.image.height as f64;
            let gt_labeled: Vec<(BBox, ClassLabel)> = doc
                .annotations
                .iter()
                .map(|a| (a.bbox.scale(fx, fy), a.label))
                .collect();
            let gt_boxes: Vec<BBox> = gt_labeled.iter().map(|(b, _)| *b).collect();
            let assignments = assign_anchor_labels(&anchors, &gt_boxes, &opts.match_cfg);
            Ok(ImageCache { gt_boxes, gt_labeled, assignments })
        })
        .collect()
}

fn validate_dataset(
    model: &DetectorModel,
    docs: &[AnnotatedDocument],
) -> Result<(), DetectorError> {
    if docs.is_empty() {
        return Err(DetectorError::BadDataset("training set is empty".into()));
    }
    for doc in docs {
        if doc.image.width == 0 || doc.image.height == 0 {
            return Err(DetectorError::BadDataset(format!(
                "image \"{}\" has a zero dimension",
                doc.id
            )));
        }
        for a in &doc.annotations {
            if a.label.index() >= model.num_classes() {
                return Err(DetectorError::BadDataset(format!(
                    "image \"{}\" uses label id {} outside the model's {} classes",
                    doc.id,
                    a.label.0,
                    model.num_classes()
                )));
            }
        }
    }
    Ok(())
}

/// Runs SGD over the dataset. Deterministic given `opts.seed`; returns
/// the per-epoch loss trace. A checkpoint lands in `checkpoint_dir`
/// after every epoch when that directory is configured.
pub fn train(
    model: &mut DetectorModel,
    docs: &[AnnotatedDocument],
    opts: &TrainOptions,
) -> Result<Vec<EpochStats>, DetectorError> {
    opts.hp
        .validate()
        .map_err(DetectorError::BadConfig)?;
    opts.match_cfg.validate()?;
    opts.proposal_cfg.validate()?;
    validate_dataset(model, docs)?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| crate::data::DataError::io(dir, e))?;
    }

    let caches = build_caches(model, docs, opts)?;
    let (fh, fw) = model.backbone_cfg.feature_size(INPUT_SIZE);
    let anchors_len = fh * fw * model.anchor_cfg.anchors_per_cell();

    let mut seed_bytes = [0u8; 32];
    seed_bytes[..8].copy_from_slice(&opts.seed.to_le_bytes());
    seed_bytes[8..16].copy_from_slice(b"trainrng");
    let mut rng = ChaCha8Rng::from_seed(seed_bytes);

    let mut trace = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let lr = lr_schedule(&opts.hp, epoch);
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = LossParts::default();
        let mut steps = 0usize;
        for batch in order.chunks(opts.hp.batch_size) {
            // derive per-image seeds before fanning out
            let jobs: Vec<(usize, u64)> =
                batch.iter().map(|&i| (i, rng.gen::<u64>())).collect();
            let results: Vec<Result<(LossParts, GradSet), DetectorError>> = jobs
                .par_iter()
                .map(|&(i, s)| train_step(model, &docs[i], &caches[i], anchors_len, opts, s))
                .collect();

            let mut batch_loss = LossParts::default();
            let mut batch_grads: Option<GradSet> = None;
            for r in results {
                let (l, g) = r?;
                batch_loss.add(&l);
                match &mut batch_grads {
                    None => batch_grads = Some(g),
                    Some(acc) => acc.add(&g),
                }
            }
            let n = batch.len() as f64;
            batch_loss.scale(1.0 / n);
            let mut grads = batch_grads.expect("non-empty batch");
            grads.scale(1.0 / n);

            let mut params = model.params_mut();
            for (p, g) in params.iter_mut().zip(&grads.slots) {
                p.grad = g.clone();
            }
            sgd_step(&mut params, lr);

            epoch_loss.add(&batch_loss);
            steps += 1;
        }
        epoch_loss.scale(1.0 / steps.max(1) as f64);
        trace.push(EpochStats {
            epoch,
            lr,
            rpn_cls: epoch_loss.rpn_cls,
            rpn_reg: epoch_loss.rpn_reg,
            head_cls: epoch_loss.head_cls,
            head_reg: epoch_loss.head_reg,
            total: epoch_loss.total(),
        });
        if let Some(dir) = &opts.checkpoint_dir {
            model.save_checkpoint(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
    }
    Ok(trace)
}

/// Initializes `model` from a checkpoint and trains on `docs`. The head
/// classification/regression layers are reinitialized when their shapes
/// differ from the checkpoint (label-set change); everything else must
/// match. Returns the loss trace and whether the head was rebuilt.
pub fn fine_tune(
    model: &mut DetectorModel,
    checkpoint: &std::path::Path,
    docs: &[AnnotatedDocument],
    opts: &TrainOptions,
) -> Result<(Vec<EpochStats>, bool), DetectorError> {
    let head_reinit = model.load_checkpoint(checkpoint, true)?;
    let trace = train(model, docs, opts)?;
    Ok((trace, head_reinit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_page, CountRange, SynthConfig};
    use crate::detector::{BackboneConfig, RoiConfig};
    use crate::geometry::{AnchorConfig, LabelSet};

    fn small_pages(n: u64, seed: u64) -> Vec<AnnotatedDocument> {
        let mut cfg = SynthConfig::base(seed);
        cfg.tables = CountRange::new(1, 1);
        cfg.figures = CountRange::new(0, 1);
        cfg.equations = CountRange::new(0, 1);
        (0..n).map(|i| synth_page(&cfg, i).unwrap()).collect()
    }

    fn quick_model(seed: u64) -> DetectorModel {
        DetectorModel::new(
            BackboneConfig::tiny(),
            AnchorConfig::reference(),
            RoiConfig::default(),
            LabelSet::graphical(),
            seed,
        )
        .unwrap()
    }

    fn quick_opts(epochs: usize, seed: u64) -> TrainOptions {
        TrainOptions {
            epochs,
            seed,
            hp: TrainHyperparams { batch_size: 2, ..Default::default() },
            match_cfg: MatchConfig { rpn_batch: 32, head_batch: 8, ..Default::default() },
            proposal_cfg: ProposalConfig {
                pre_nms_top_n: 100,
                post_nms_top_n: 20,
                nms_threshold: 0.7,
                min_box_size: 4.0,
            },
            ..Default::default()
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut m = quick_model(1);
        assert!(matches!(
            train(&mut m, &[], &quick_opts(1, 0)),
            Err(DetectorError::BadDataset(_))
        ));
    }

    #[test]
    fn out_of_range_label_reports_image_id() {
        let mut m = DetectorModel::new(
            BackboneConfig::tiny(),
            AnchorConfig::reference(),
            RoiConfig::default(),
            LabelSet::new(["table"]),
            1,
        )
        .unwrap();
        let docs = small_pages(1, 5); // labels up to 2
        let err = train(&mut m, &docs, &quick_opts(1, 0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("synth-00000"), "{msg}");
    }

    #[test]
    fn two_epochs_run_and_trace_lr_schedule() {
        let docs = small_pages(2, 11);
        let mut m = quick_model(3);
        let trace = train(&mut m, &docs, &quick_opts(2, 7)).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace[0].lr, 0.001);
        assert_eq!(trace[1].lr, 0.001);
        assert!(trace.iter().all(|t| t.total.is_finite()));
    }

    #[test]
    fn loss_decreases_and_lr_follows_schedule() {
        let docs = small_pages(6, 17);
        let mut m = quick_model(9);
        let trace = train(&mut m, &docs, &quick_opts(6, 3)).unwrap();
        assert!(
            trace.last().unwrap().total < trace[0].total,
            "loss did not decrease: {} -> {}",
            trace[0].total,
            trace.last().unwrap().total
        );
        // default schedule: 0.001 decayed by 0.1 after every 5 epochs
        assert_eq!(trace[0].lr, 0.001);
        assert!((trace[5].lr - 0.0001).abs() < 1e-18);
    }

    #[test]
    fn fine_tune_resumes_near_pretraining_loss() {
        let docs = small_pages(4, 19);
        let dir = std::env::temp_dir().join(format!("docdet-ft-{}", std::process::id()));
        let mut pre = quick_model(2);
        let mut opts = quick_opts(3, 5);
        opts.checkpoint_dir = Some(dir.clone());
        let pre_trace = train(&mut pre, &docs, &opts).unwrap();

        let mut ft = quick_model(4);
        let ft_opts = quick_opts(1, 6);
        let (ft_trace, head_reinit) = fine_tune(
            &mut ft,
            &dir.join("epoch_002.ckpt"),
            &docs,
            &ft_opts,
        )
        .unwrap();
        assert!(!head_reinit);
        // resuming on the same data starts around where pretraining ended,
        // clearly below a cold start
        assert!(ft_trace[0].total < pre_trace[0].total);
        assert!(ft_trace[0].total < pre_trace.last().unwrap().total * 2.0 + 0.2);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let docs = small_pages(2, 13);
        let mut a = quick_model(5);
        let mut b = quick_model(5);
        let ta = train(&mut a, &docs, &quick_opts(2, 21)).unwrap();
        let tb = train(&mut b, &docs, &quick_opts(2, 21)).unwrap();
        assert_eq!(a.param_checksum(), b.param_checksum());
        assert_eq!(ta, tb);

        let mut c = quick_model(5);
        let _ = train(&mut c, &docs, &quick_opts(2, 22)).unwrap();
        assert_ne!(a.param_checksum(), c.param_checksum());
    }
}

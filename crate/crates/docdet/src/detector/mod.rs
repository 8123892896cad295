//! The two-stage detector: backbone feature extraction, region proposal
//! network, RoI feature extraction (pool or align) and the box
//! classification/regression head, plus training, fine-tuning and
//! inference.

pub mod assign;
pub mod backbone;
pub mod head;
pub mod infer;
pub mod preprocess;
pub mod roi;
pub mod rpn;
pub mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AnchorConfig, LabelSet};
use crate::numerics::{NumericsError, Parameter, Tensor};

pub use backbone::{BackboneConfig, ConvSpec};
pub use infer::{detect, propose};
pub use preprocess::{preprocess, preprocess_image, INPUT_SIZE};
pub use train::{fine_tune, train, EpochStats, TrainOptions};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("model configuration invalid: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error("checkpoint is incompatible with the model: {0}")]
    IncompatibleCheckpoint(String),
    #[error("training dataset problem: {0}")]
    BadDataset(String),
}

/// Proposal filtering budget applied after the RPN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub pre_nms_top_n: usize,
    pub post_nms_top_n: usize,
    pub nms_threshold: f64,
    pub min_box_size: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            pre_nms_top_n: 2000,
            post_nms_top_n: 300,
            nms_threshold: 0.7,
            min_box_size: 4.0,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.post_nms_top_n > self.pre_nms_top_n {
            return Err(DetectorError::BadConfig(
                "post_nms_top_n must not exceed pre_nms_top_n".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return Err(DetectorError::BadConfig("nms_threshold outside [0,1]".into()));
        }
        Ok(())
    }
}

/// Anchor / RoI labeling thresholds and sampling budgets for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// IoU at or above which an anchor is a positive RPN sample.
    pub positive_iou: f64,
    /// IoU at or below which an anchor is a negative RPN sample.
    pub negative_iou: f64,
    /// Anchors sampled per image for the RPN loss.
    pub rpn_batch: usize,
    /// Fraction of the sampled batch reserved for positives.
    pub positive_fraction: f64,
    /// IoU at or above which a head candidate counts as foreground.
    pub head_positive_iou: f64,
    /// RoIs sampled per image for the head loss.
    pub head_batch: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            positive_iou: 0.7,
            negative_iou: 0.3,
            rpn_batch: 256,
            positive_fraction: 0.5,
            head_positive_iou: 0.5,
            head_batch: 64,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.negative_iou > self.positive_iou {
            return Err(DetectorError::BadConfig(
                "negative_iou must not exceed positive_iou".into(),
            ));
        }
        if self.rpn_batch == 0 || self.head_batch == 0 {
            return Err(DetectorError::BadConfig("sampling batches must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiMode {
    /// Quantized bins with per-bin max, the Fast R-CNN original.
    Pool,
    /// Unquantized bins averaging bilinear samples, preserving sub-cell
    /// alignment.
    Align,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiConfig {
    pub mode: RoiMode,
    pub output_size: (usize, usize),
    /// Sample grid per bin edge in align mode (samples_per_bin^2 points).
    pub samples_per_bin: usize,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { mode: RoiMode::Align, output_size: (7, 7), samples_per_bin: 2 }
    }
}

impl RoiConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.output_size.0 == 0 || self.output_size.1 == 0 || self.samples_per_bin == 0 {
            return Err(DetectorError::BadConfig("roi output size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct ConvLayer {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone)]
pub struct DenseLayer {
    pub weight: Parameter,
    pub bias: Parameter,
}

/// Width of the two hidden fully connected layers between RoI features
/// and the classification/regression outputs.
pub const HEAD_HIDDEN: usize = 128;
/// Channels of the 3x3 RPN sliding-window conv.
pub const RPN_MID_CHANNELS: usize = 32;

/// Structural description of a model, enough to rebuild the architecture
/// before loading a checkpoint. Written next to checkpoints as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneConfig,
    pub anchors: AnchorConfig,
    pub roi: RoiConfig,
    pub labels: Vec<String>,
}

impl ModelSpec {
    pub fn of(model: &DetectorModel) -> Self {
        Self {
            backbone: model.backbone_cfg.clone(),
            anchors: model.anchor_cfg.clone(),
            roi: model.roi_cfg,
            labels: model.labels.names().to_vec(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<DetectorModel, DetectorError> {
        DetectorModel::new(
            self.backbone.clone(),
            self.anchors.clone(),
            self.roi,
            LabelSet::new(self.labels.iter().cloned()),
            seed,
        )
    }
}

/// All trainable state plus the structural configuration it was built
/// from. Parameters are named for checkpointing.
#[derive(Clone)]
pub struct DetectorModel {
    pub backbone_cfg: BackboneConfig,
    pub anchor_cfg: AnchorConfig,
    pub roi_cfg: RoiConfig,
    pub labels: LabelSet,
    pub backbone: Vec<ConvLayer>,
    pub rpn_mid: ConvLayer,
    pub rpn_cls: ConvLayer,
    pub rpn_reg: ConvLayer,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
    pub cls_head: DenseLayer,
    pub reg_head: DenseLayer,
}

fn he_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    // Box-Muller normal scaled to He initialization.
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        data.push(r * theta.cos() * std);
        if data.len() < n {
            data.push(r * theta.sin() * std);
        }
    }
    Tensor::from_vec(shape, data).expect("shape matches data")
}

fn conv_layer(
    rng: &mut ChaCha8Rng,
    name: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> ConvLayer {
    ConvLayer {
        weight: Parameter::new(
            format!("{name}.weight"),
            he_tensor(rng, &[out_c, in_c, k, k], in_c * k * k),
        ),
        bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[out_c])),
        stride,
        padding,
    }
}

fn dense_layer(rng: &mut ChaCha8Rng, name: &str, d_out: usize, d_in: usize) -> DenseLayer {
    DenseLayer {
        weight: Parameter::new(format!("{name}.weight"), he_tensor(rng, &[d_out, d_in], d_in)),
        bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[d_out])),
    }
}

impl DetectorModel {
    pub fn new(
        backbone_cfg: BackboneConfig,
        anchor_cfg: AnchorConfig,
        roi_cfg: RoiConfig,
        labels: LabelSet,
        seed: u64,
    ) -> Result<Self, DetectorError> {
        backbone_cfg.validate()?;
        roi_cfg.validate()?;
        if anchor_cfg.stride() != backbone_cfg.total_stride() {
            return Err(DetectorError::BadConfig(format!(
                "anchor stride {} must equal backbone total stride {}",
                anchor_cfg.stride(),
                backbone_cfg.total_stride()
            )));
        }
        let mut seed_bytes = [0u8; 32];
        seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
        seed_bytes[8..16].copy_from_slice(b"initpars");
        let mut rng = ChaCha8Rng::from_seed(seed_bytes);
        use rand::SeedableRng;
        let _ = &mut rng;

        let mut backbone = Vec::new();
        let mut in_c = 3;
        for (i, spec) in backbone_cfg.layers.iter().enumerate() {
            backbone.push(conv_layer(
                &mut rng,
                &format!("backbone.conv{i}"),
                spec.out_channels,
                in_c,
                spec.kernel,
                spec.stride,
                spec.padding,
            ));
            in_c = spec.out_channels;
        }
        let feat_c = in_c;
        let k = anchor_cfg.anchors_per_cell();
        let n_classes = labels.len();
        let roi_flat = feat_c * roi_cfg.output_size.0 * roi_cfg.output_size.1;

        Ok(Self {
            backbone,
            rpn_mid: conv_layer(&mut rng, "rpn.mid", RPN_MID_CHANNELS, feat_c, 3, 1, 1),
            rpn_cls: conv_layer(&mut rng, "rpn.cls", 2 * k, RPN_MID_CHANNELS, 1, 1, 0),
            rpn_reg: conv_layer(&mut rng, "rpn.reg", 4 * k, RPN_MID_CHANNELS, 1, 1, 0),
            fc1: dense_layer(&mut rng, "head.fc1", HEAD_HIDDEN, roi_flat),
            fc2: dense_layer(&mut rng, "head.fc2", HEAD_HIDDEN, HEAD_HIDDEN),
            cls_head: dense_layer(&mut rng, "head.cls", n_classes + 1, HEAD_HIDDEN),
            reg_head: dense_layer(&mut rng, "head.reg", 4 * (n_classes + 1), HEAD_HIDDEN),
            backbone_cfg,
            anchor_cfg,
            roi_cfg,
            labels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Feature channels produced by the backbone.
    pub fn feature_channels(&self) -> usize {
        self.backbone_cfg.out_channels()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for l in &self.backbone {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for l in [&self.rpn_mid, &self.rpn_cls, &self.rpn_reg] {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for d in [&self.fc1, &self.fc2, &self.cls_head, &self.reg_head] {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = Vec::new();
        for l in &mut self.backbone {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in [&mut self.rpn_mid, &mut self.rpn_cls, &mut self.rpn_reg] {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for d in [&mut self.fc1, &mut self.fc2, &mut self.cls_head, &mut self.reg_head] {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<(), DetectorError> {
        crate::checkpoint::save(path, &self.params())?;
        Ok(())
    }

    /// Copies checkpoint tensors into this model by parameter name.
    ///
    /// When `allow_head_reinit` is set, head classification/regression
    /// parameters (`head.cls.*`, `head.reg.*`) that are missing or have a
    /// different shape keep their fresh initialization; any other
    /// mismatch is an error. Returns whether the head was reinitialized.
    pub fn load_checkpoint(
        &mut self,
        path: &std::path::Path,
        allow_head_reinit: bool,
    ) -> Result<bool, DetectorError> {
        let entries = crate::checkpoint::load(path)?;
        let by_name: std::collections::BTreeMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut head_reinit = false;
        for p in self.params_mut() {
            let reinit_ok =
                allow_head_reinit && (p.name.starts_with("head.cls") || p.name.starts_with("head.reg"));
            match by_name.get(p.name.as_str()) {
                Some(t) if t.shape() == p.value.shape() => {
                    p.value = (*t).clone();
                }
                Some(t) if reinit_ok => {
                    let _ = t;
                    head_reinit = true;
                }
                Some(t) => {
                    return Err(DetectorError::IncompatibleCheckpoint(format!(
                        "parameter {} has shape {:?} in checkpoint, model wants {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )));
                }
                None if reinit_ok => {
                    head_reinit = true;
                }
                None => {
                    return Err(DetectorError::IncompatibleCheckpoint(format!(
                        "parameter {} missing from checkpoint",
                        p.name
                    )));
                }
            }
        }
        Ok(head_reinit)
    }

    /// Deterministic digest of all parameter bytes, for reproducibility
    /// checks.
    pub fn param_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in self.params() {
            for v in p.value.data() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> DetectorModel {
        DetectorModel::new(
            BackboneConfig::tiny(),
            AnchorConfig::reference(),
            RoiConfig::default(),
            LabelSet::graphical(),
            7,
        )
        .unwrap()
    }

    #[test]
    fn rpn_output_channels_match_anchor_count() {
        let m = tiny_model();
        let k = m.anchor_cfg.anchors_per_cell();
        assert_eq!(k, 30);
        assert_eq!(m.rpn_cls.weight.value.shape()[0], 2 * k);
        assert_eq!(m.rpn_reg.weight.value.shape()[0], 4 * k);
    }

    #[test]
    fn head_widths_follow_class_count() {
        let m = tiny_model();
        assert_eq!(m.cls_head.weight.value.shape()[0], 4); // 3 classes + bg
        assert_eq!(m.reg_head.weight.value.shape()[0], 16);
    }

    #[test]
    fn same_seed_same_init() {
        let a = tiny_model();
        let b = tiny_model();
        assert_eq!(a.param_checksum(), b.param_checksum());
        let c = DetectorModel::new(
            BackboneConfig::tiny(),
            AnchorConfig::reference(),
            RoiConfig::default(),
            LabelSet::graphical(),
            8,
        )
        .unwrap();
        assert_ne!(a.param_checksum(), c.param_checksum());
    }

    #[test]
    fn anchor_stride_must_match_backbone() {
        let bad = AnchorConfig::new(vec![8.0], vec![1.0], 8).unwrap();
        assert!(DetectorModel::new(
            BackboneConfig::tiny(),
            bad,
            RoiConfig::default(),
            LabelSet::graphical(),
            0,
        )
        .is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_head_reinit() {
        let dir = std::env::temp_dir().join(format!("docdet-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        let m = tiny_model();
        m.save_checkpoint(&path).unwrap();

        let mut same = tiny_model();
        let reinit = same.load_checkpoint(&path, false).unwrap();
        assert!(!reinit);
        assert_eq!(same.param_checksum(), m.param_checksum());

        // single-class head on a 3-class checkpoint: only head.cls/head.reg differ
        let mut narrow = DetectorModel::new(
            BackboneConfig::tiny(),
            AnchorConfig::reference(),
            RoiConfig::default(),
            LabelSet::new(["table"]),
            99,
        )
        .unwrap();
        let before_backbone = narrow.backbone[0].weight.value.clone();
        let reinit = narrow.load_checkpoint(&path, true).unwrap();
        assert!(reinit);
        assert_ne!(before_backbone, narrow.backbone[0].weight.value);
        assert_eq!(narrow.backbone[0].weight.value, m.backbone[0].weight.value);
        // strict mode refuses
        let mut narrow2 = DetectorModel::new(
            BackboneConfig::tiny(),
            AnchorConfig::reference(),
            RoiConfig::default(),
            LabelSet::new(["table"]),
            99,
        )
        .unwrap();
        assert!(narrow2.load_checkpoint(&path, false).is_err());
        std::fs::remove_dir_all(dir).ok();
    }
}

//! Convolutional backbone presets and the feature-extraction pass.

use serde::{Deserialize, Serialize};

use super::{ConvLayer, DetectorError, DetectorModel};
use crate::numerics::{
    conv2d, conv2d_backward, conv2d_backward_params, conv2d_out_size, relu, relu_backward, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Ordered conv layers (each followed by ReLU). Presets replace the
/// large pretrained backbones with desk-scale depths; both end in a conv
/// rather than a pooling layer and have total stride 16.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub name: String,
    pub layers: Vec<ConvSpec>,
}

impl BackboneConfig {
    /// 4 conv layers, total stride 16.
    pub fn tiny() -> Self {
        Self {
            name: "tiny".into(),
            layers: vec![
                ConvSpec { out_channels: 8, kernel: 5, stride: 4, padding: 2 },
                ConvSpec { out_channels: 16, kernel: 3, stride: 2, padding: 1 },
                ConvSpec { out_channels: 24, kernel: 3, stride: 2, padding: 1 },
                ConvSpec { out_channels: 32, kernel: 3, stride: 1, padding: 1 },
            ],
        }
    }

    /// 8 conv layers, total stride 16, wider late stages.
    pub fn small() -> Self {
        Self {
            name: "small".into(),
            layers: vec![
                ConvSpec { out_channels: 8, kernel: 5, stride: 4, padding: 2 },
                ConvSpec { out_channels: 12, kernel: 3, stride: 1, padding: 1 },
                ConvSpec { out_channels: 16, kernel: 3, stride: 2, padding: 1 },
                ConvSpec { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
                ConvSpec { out_channels: 24, kernel: 3, stride: 2, padding: 1 },
                ConvSpec { out_channels: 24, kernel: 3, stride: 1, padding: 1 },
                ConvSpec { out_channels: 32, kernel: 3, stride: 1, padding: 1 },
                ConvSpec { out_channels: 32, kernel: 3, stride: 1, padding: 1 },
            ],
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "small" => Some(Self::small()),
            _ => None,
        }
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    /// Spatial size of the feature map for a square input.
    pub fn feature_size(&self, input: usize) -> (usize, usize) {
        let mut h = input;
        let mut w = input;
        for l in &self.layers {
            h = conv2d_out_size(h, l.kernel, l.stride, l.padding);
            w = conv2d_out_size(w, l.kernel, l.stride, l.padding);
        }
        (h, w)
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.layers.is_empty() {
            return Err(DetectorError::BadConfig("backbone needs at least one layer".into()));
        }
        for l in &self.layers {
            if l.out_channels == 0 || l.kernel == 0 || l.stride == 0 {
                return Err(DetectorError::BadConfig(format!("bad layer spec {l:?}")));
            }
        }
        let (h, w) = self.feature_size(super::preprocess::INPUT_SIZE);
        if h == 0 || w == 0 {
            return Err(DetectorError::BadConfig(
                "backbone collapses the input to an empty feature map".into(),
            ));
        }
        Ok(())
    }
}

/// Activations kept from the forward pass for the backward pass: the
/// input of each conv and its pre-ReLU output.
pub struct BackboneTrace {
    pub inputs: Vec<Tensor>,
    pub pre_relu: Vec<Tensor>,
    pub features: Tensor,
}

/// Runs the backbone on a [3, H, W] image tensor, producing [C, FH, FW]
/// features.
pub fn backbone_forward(model: &DetectorModel, image: &Tensor) -> Result<Tensor, DetectorError> {
    Ok(backbone_forward_traced(model, image)?.features)
}

pub fn backbone_forward_traced(
    model: &DetectorModel,
    image: &Tensor,
) -> Result<BackboneTrace, DetectorError> {
    let mut x = image.clone().reshape(&with_batch(image.shape()))?;
    let mut inputs = Vec::with_capacity(model.backbone.len());
    let mut pre_relu = Vec::with_capacity(model.backbone.len());
    for layer in &model.backbone {
        let z = conv2d(&x, &layer.weight.value, &layer.bias.value, layer.stride, layer.padding)?;
        inputs.push(x);
        x = relu(&z);
        pre_relu.push(z);
    }
    let shape = x.shape().to_vec();
    let features = x.reshape(&shape[1..])?;
    Ok(BackboneTrace { inputs, pre_relu, features })
}

/// Backpropagates d(features) through the backbone, accumulating weight
/// and bias gradients into `grads` (ordered weight, bias per layer).
pub fn backbone_backward(
    layers: &[ConvLayer],
    trace: &BackboneTrace,
    d_features: &Tensor,
    grads: &mut [Tensor],
) -> Result<(), DetectorError> {
    assert_eq!(grads.len(), layers.len() * 2, "grad slots per layer: weight, bias");
    let mut d_out = d_features
        .clone()
        .reshape(&with_batch(d_features.shape()))?;
    for (i, layer) in layers.iter().enumerate().rev() {
        let d_pre = relu_backward(&trace.pre_relu[i], &d_out);
        if i == 0 {
            // nothing consumes the gradient w.r.t. the input image
            let k = layer.weight.value.shape()[2];
            let (d_w, d_b) = conv2d_backward_params(
                &trace.inputs[0],
                (k, k),
                layer.stride,
                layer.padding,
                &d_pre,
            )?;
            grads[0].add_assign(&d_w);
            grads[1].add_assign(&d_b);
            break;
        }
        let (d_in, d_w, d_b) = conv2d_backward(
            &trace.inputs[i],
            &layer.weight.value,
            layer.stride,
            layer.padding,
            &d_pre,
        )?;
        grads[2 * i].add_assign(&d_w);
        grads[2 * i + 1].add_assign(&d_b);
        d_out = d_in;
    }
    Ok(())
}

fn with_batch(shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(1);
    s.extend_from_slice(shape);
    s
}

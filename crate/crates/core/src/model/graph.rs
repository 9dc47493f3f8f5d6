//! Declarative layer graph.
//!
//! A model segment is an ordered list of [`LayerSpec`] nodes forming a DAG.
//! Each node consumes the outputs of earlier nodes (or the segment input) and
//! produces one tensor. The same description drives construction, the
//! forward/backward pass, parameter and FLOP accounting, and pruning analysis,
//! so they can never disagree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a layer reads its input from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRef {
    /// The segment input tensor.
    Input,
    /// Output of an earlier node, by index into the layer list.
    Node(usize),
}

/// Layer kinds. The forward graph is restricted to operations with first-class
/// support in embedded inference stacks: 2-D convolutions (plain and
/// transposed), normalization, pointwise activation, concatenation, addition,
/// and bilinear interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    TransposeConv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        /// Node whose output spatial size this layer must reproduce. Stride-2
        /// encoders round odd sizes up, so the matching decoder picks its
        /// output padding at run time from the partner node instead of a
        /// fixed constant.
        match_size_of: Option<NodeRef>,
    },
    /// Batch normalization: per-channel scale/shift with batch statistics in
    /// training mode and frozen running statistics in evaluation mode.
    Norm { channels: usize },
    /// Pointwise ReLU.
    Activation,
    /// Bilinear resampling by the rational factor `scale_num / scale_den`.
    BilinearResize { scale_num: usize, scale_den: usize },
    /// Elementwise addition of two inputs (residual/skip join).
    SkipAdd,
    /// Channel-axis concatenation of two inputs.
    Concat,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::TransposeConv2d { .. } => "transpose_conv2d",
            LayerKind::Norm { .. } => "norm",
            LayerKind::Activation => "activation",
            LayerKind::BilinearResize { .. } => "bilinear_interpolation",
            LayerKind::SkipAdd => "add",
            LayerKind::Concat => "concat",
        }
    }

    /// True for layers that own learnable parameters.
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d { .. } | LayerKind::TransposeConv2d { .. } | LayerKind::Norm { .. }
        )
    }
}

/// One node of the layer graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub inputs: Vec<NodeRef>,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, inputs: Vec<NodeRef>) -> Self {
        LayerSpec { kind, inputs }
    }

    pub fn unary(kind: LayerKind, input: NodeRef) -> Self {
        LayerSpec { kind, inputs: vec![input] }
    }
}

/// Channel count flowing out of each node, given the segment input channels.
///
/// Also validates producer/consumer channel agreement; this is the invariant
/// that every layer's input width equals its predecessor's output width.
pub fn infer_channels(layers: &[LayerSpec], input_channels: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(layers.len());
    let ch_of = |r: &NodeRef, out: &[usize]| -> usize {
        match r {
            NodeRef::Input => input_channels,
            NodeRef::Node(i) => out[*i],
        }
    };
    for (idx, layer) in layers.iter().enumerate() {
        let arity = match layer.kind {
            LayerKind::SkipAdd | LayerKind::Concat => 2,
            _ => 1,
        };
        if layer.inputs.len() != arity {
            return Err(Error::Analysis(format!(
                "layer {idx} ({}) expects {arity} input(s), has {}",
                layer.kind.name(),
                layer.inputs.len()
            )));
        }
        if layer.inputs.iter().any(|r| matches!(r, NodeRef::Node(i) if *i >= idx)) {
            return Err(Error::Analysis(format!("layer {idx} reads from a non-predecessor node")));
        }
        let c0 = ch_of(&layer.inputs[0], &out);
        let c = match &layer.kind {
            LayerKind::Conv2d { in_ch, out_ch, .. }
            | LayerKind::TransposeConv2d { in_ch, out_ch, .. } => {
                if *in_ch != c0 {
                    return Err(Error::Analysis(format!(
                        "layer {idx} ({}) expects {in_ch} input channels, gets {c0}",
                        layer.kind.name()
                    )));
                }
                *out_ch
            }
            LayerKind::Norm { channels } => {
                if *channels != c0 {
                    return Err(Error::Analysis(format!(
                        "layer {idx} norm expects {channels} channels, gets {c0}"
                    )));
                }
                c0
            }
            LayerKind::Activation | LayerKind::BilinearResize { .. } => c0,
            LayerKind::SkipAdd => {
                let c1 = ch_of(&layer.inputs[1], &out);
                if c0 != c1 {
                    return Err(Error::Analysis(format!(
                        "layer {idx} add joins mismatched widths {c0} and {c1}"
                    )));
                }
                c0
            }
            LayerKind::Concat => c0 + ch_of(&layer.inputs[1], &out),
        };
        out.push(c);
    }
    Ok(out)
}

/// Spatial size of every node's output for an `(h, w)` segment input.
pub fn infer_spatial(
    layers: &[LayerSpec],
    input_hw: (usize, usize),
) -> Result<Vec<(usize, usize)>> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(layers.len());
    let hw_of = |r: &NodeRef, out: &[(usize, usize)]| match r {
        NodeRef::Input => input_hw,
        NodeRef::Node(i) => out[*i],
    };
    for (idx, layer) in layers.iter().enumerate() {
        let (h, w) = hw_of(&layer.inputs[0], &out);
        let hw = match &layer.kind {
            LayerKind::Conv2d { kernel, stride, padding, .. } => {
                let oh = (h + 2 * padding).checked_sub(*kernel).map(|v| v / stride + 1);
                let ow = (w + 2 * padding).checked_sub(*kernel).map(|v| v / stride + 1);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => (oh, ow),
                    (None, _) => {
                        return Err(Error::shape(
                            "height",
                            format!("layer {idx} conv kernel larger than padded input height {h}"),
                        ))
                    }
                    (_, None) => {
                        return Err(Error::shape(
                            "width",
                            format!("layer {idx} conv kernel larger than padded input width {w}"),
                        ))
                    }
                }
            }
            LayerKind::TransposeConv2d { kernel, stride, padding, match_size_of, .. } => {
                match match_size_of {
                    Some(r) => hw_of(r, &out),
                    None => (
                        (h - 1) * stride + kernel - 2 * padding,
                        (w - 1) * stride + kernel - 2 * padding,
                    ),
                }
            }
            LayerKind::BilinearResize { scale_num, scale_den } => {
                if (h * scale_num) % scale_den != 0 {
                    return Err(Error::shape(
                        "height",
                        format!("layer {idx} resize of {h} by {scale_num}/{scale_den} is fractional"),
                    ));
                }
                if (w * scale_num) % scale_den != 0 {
                    return Err(Error::shape(
                        "width",
                        format!("layer {idx} resize of {w} by {scale_num}/{scale_den} is fractional"),
                    ));
                }
                (h * scale_num / scale_den, w * scale_num / scale_den)
            }
            LayerKind::SkipAdd | LayerKind::Concat => {
                let (h1, w1) = hw_of(&layer.inputs[1], &out);
                if (h, w) != (h1, w1) {
                    return Err(Error::shape(
                        "height",
                        format!("layer {idx} joins mismatched sizes {h}x{w} and {h1}x{w1}"),
                    ));
                }
                (h, w)
            }
            LayerKind::Norm { .. } | LayerKind::Activation => (h, w),
        };
        out.push(hw);
    }
    Ok(out)
}

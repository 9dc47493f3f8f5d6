//! Segment executor: runs a layer list forward (recording what the backward
//! pass needs) and backward (accumulating parameter gradients).

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, ModuleTag};
use crate::model::graph::{LayerKind, LayerSpec, NodeRef};
use crate::model::params::{Grads, ParamRole, ParamStore};
use crate::nn;
use crate::nn::conv;
use crate::nn::norm::{self, NormSaved};
use crate::nn::T4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a segment forward pass produces: per-node outputs, the
/// statistics each norm layer used, and the running-statistic updates a
/// training step should apply afterwards.
pub struct SegmentTrace {
    pub outputs: Vec<T4>,
    norm_saved: Vec<Option<NormSaved>>,
    pub norm_updates: Vec<(usize, Array1<f32>, Array1<f32>)>,
}

impl SegmentTrace {
    pub fn output(&self) -> &T4 {
        self.outputs.last().expect("segment is non-empty")
    }
}

fn resolve<'a>(r: NodeRef, input: &'a T4, outputs: &'a [T4]) -> &'a T4 {
    match r {
        NodeRef::Input => input,
        NodeRef::Node(i) => &outputs[i],
    }
}

pub fn forward_segment(
    config: &ModelConfig,
    tag: ModuleTag,
    store: &ParamStore,
    input: &T4,
    mode: Mode,
) -> Result<SegmentTrace> {
    let layers = config.segment(tag);
    let mut outputs: Vec<T4> = Vec::with_capacity(layers.len());
    let mut norm_saved: Vec<Option<NormSaved>> = Vec::with_capacity(layers.len());
    let mut norm_updates = Vec::new();

    for (idx, spec) in layers.iter().enumerate() {
        let x = resolve(spec.inputs[0], input, &outputs);
        let mut saved = None;
        let y = match &spec.kind {
            LayerKind::Conv2d { stride, padding, in_ch, .. } => {
                check_channels(x, *in_ch, tag, idx)?;
                let w = store.conv_weight(tag, idx)?;
                let b = store.vec1(tag, idx, ParamRole::ConvBias)?;
                conv::conv2d_forward(x, &w, &b, *stride, *padding)
            }
            LayerKind::TransposeConv2d { stride, padding, in_ch, kernel, match_size_of, .. } => {
                check_channels(x, *in_ch, tag, idx)?;
                let w = store.conv_weight(tag, idx)?;
                let b = store.vec1(tag, idx, ParamRole::ConvBias)?;
                let (_, _, h, win) = x.dim();
                let out_hw = match match_size_of {
                    Some(r) => {
                        let t = resolve(*r, input, &outputs);
                        (t.dim().2, t.dim().3)
                    }
                    None => (
                        (h - 1) * stride + kernel - 2 * padding,
                        (win - 1) * stride + kernel - 2 * padding,
                    ),
                };
                conv::transpose_conv2d_forward(x, &w, &b, *stride, *padding, out_hw)
            }
            LayerKind::Norm { channels } => {
                check_channels(x, *channels, tag, idx)?;
                let scale = store.vec1(tag, idx, ParamRole::NormScale)?;
                let shift = store.vec1(tag, idx, ParamRole::NormShift)?;
                let rm = store.vec1(tag, idx, ParamRole::RunningMean)?;
                let rv = store.vec1(tag, idx, ParamRole::RunningVar)?;
                match mode {
                    Mode::Train => {
                        let (y, s, upd) = norm::norm_forward_train(x, &scale, &shift, &rm, &rv);
                        saved = Some(s);
                        norm_updates.push((idx, upd.running_mean, upd.running_var));
                        y
                    }
                    Mode::Eval => {
                        let (y, s) = norm::norm_forward_eval(x, &scale, &shift, &rm, &rv);
                        saved = Some(s);
                        y
                    }
                }
            }
            LayerKind::Activation => nn::relu_forward(x),
            LayerKind::BilinearResize { scale_num, scale_den } => {
                let (_, _, h, w) = x.dim();
                if (h * scale_num) % scale_den != 0 {
                    return Err(Error::shape(
                        "height",
                        format!("resize of {h} by {scale_num}/{scale_den} is fractional"),
                    ));
                }
                if (w * scale_num) % scale_den != 0 {
                    return Err(Error::shape(
                        "width",
                        format!("resize of {w} by {scale_num}/{scale_den} is fractional"),
                    ));
                }
                nn::resize::bilinear_forward(x, *scale_num, *scale_den)
            }
            LayerKind::SkipAdd => {
                let b = resolve(spec.inputs[1], input, &outputs);
                if x.dim() != b.dim() {
                    return Err(Error::shape(
                        "channel",
                        format!("add join of {:?} and {:?}", x.dim(), b.dim()),
                    ));
                }
                nn::add_forward(x, b)
            }
            LayerKind::Concat => {
                let b = resolve(spec.inputs[1], input, &outputs);
                nn::concat_forward(x, b)
            }
        };
        outputs.push(y);
        norm_saved.push(saved);
    }
    Ok(SegmentTrace { outputs, norm_saved, norm_updates })
}

fn check_channels(x: &T4, expect: usize, tag: ModuleTag, idx: usize) -> Result<()> {
    let got = x.dim().1;
    if got != expect {
        return Err(Error::shape(
            "channel",
            format!("{} layer {idx} expects {expect} channels, got {got}", tag.name()),
        ));
    }
    Ok(())
}

/// Runs the segment backward. `d_out` is the gradient at the segment output;
/// the return value is the gradient at the segment input. Parameter gradients
/// accumulate into `grads`.
pub fn backward_segment(
    config: &ModelConfig,
    tag: ModuleTag,
    store: &ParamStore,
    input: &T4,
    trace: &SegmentTrace,
    d_out: T4,
    mode: Mode,
    grads: &mut Grads,
) -> Result<T4> {
    let layers = config.segment(tag);
    let mut d_nodes: Vec<Option<T4>> = vec![None; layers.len()];
    let mut d_input: Option<T4> = None;
    if let Some(last) = layers.len().checked_sub(1) {
        d_nodes[last] = Some(d_out);
    } else {
        return Ok(d_out);
    }

    let route = |r: NodeRef, g: T4, d_nodes: &mut Vec<Option<T4>>, d_input: &mut Option<T4>| {
        let slot = match r {
            NodeRef::Input => d_input,
            NodeRef::Node(i) => &mut d_nodes[i],
        };
        match slot {
            Some(acc) => *acc += &g,
            None => *slot = Some(g),
        }
    };

    for idx in (0..layers.len()).rev() {
        let Some(dy) = d_nodes[idx].take() else { continue };
        let spec: &LayerSpec = &layers[idx];
        let x = resolve(spec.inputs[0], input, &trace.outputs);
        match &spec.kind {
            LayerKind::Conv2d { stride, padding, .. } => {
                let w = store.conv_weight(tag, idx)?;
                let (dx, dw, db) = conv::conv2d_backward(x, &w, *stride, *padding, &dy);
                store_grad(store, tag, idx, ParamRole::ConvWeight, dw.into_dyn(), grads);
                store_grad(store, tag, idx, ParamRole::ConvBias, db.into_dyn(), grads);
                route(spec.inputs[0], dx, &mut d_nodes, &mut d_input);
            }
            LayerKind::TransposeConv2d { stride, padding, .. } => {
                let w = store.conv_weight(tag, idx)?;
                let (dx, dw, db) = conv::transpose_conv2d_backward(x, &w, *stride, *padding, &dy);
                store_grad(store, tag, idx, ParamRole::ConvWeight, dw.into_dyn(), grads);
                store_grad(store, tag, idx, ParamRole::ConvBias, db.into_dyn(), grads);
                route(spec.inputs[0], dx, &mut d_nodes, &mut d_input);
            }
            LayerKind::Norm { .. } => {
                let scale = store.vec1(tag, idx, ParamRole::NormScale)?;
                let saved = trace.norm_saved[idx].as_ref().expect("norm saved stats");
                let (dx, dscale, dshift) = match mode {
                    Mode::Train => norm::norm_backward_train(x, &scale, saved, &dy),
                    Mode::Eval => norm::norm_backward_eval(x, &scale, saved, &dy),
                };
                store_grad(store, tag, idx, ParamRole::NormScale, dscale.into_dyn(), grads);
                store_grad(store, tag, idx, ParamRole::NormShift, dshift.into_dyn(), grads);
                route(spec.inputs[0], dx, &mut d_nodes, &mut d_input);
            }
            LayerKind::Activation => {
                let dx = nn::relu_backward(&trace.outputs[idx], &dy);
                route(spec.inputs[0], dx, &mut d_nodes, &mut d_input);
            }
            LayerKind::BilinearResize { scale_num, scale_den } => {
                let dx = nn::resize::bilinear_backward(x.dim(), *scale_num, *scale_den, &dy);
                route(spec.inputs[0], dx, &mut d_nodes, &mut d_input);
            }
            LayerKind::SkipAdd => {
                route(spec.inputs[0], dy.clone(), &mut d_nodes, &mut d_input);
                route(spec.inputs[1], dy, &mut d_nodes, &mut d_input);
            }
            LayerKind::Concat => {
                let c_first = resolve(spec.inputs[0], input, &trace.outputs).dim().1;
                let (da, db) = nn::concat_backward(&dy, c_first);
                route(spec.inputs[0], da, &mut d_nodes, &mut d_input);
                route(spec.inputs[1], db, &mut d_nodes, &mut d_input);
            }
        }
    }

    Ok(d_input.unwrap_or_else(|| T4::zeros(input.dim())))
}

fn store_grad(
    store: &ParamStore,
    tag: ModuleTag,
    layer: usize,
    role: ParamRole,
    grad: ndarray::ArrayD<f32>,
    grads: &mut Grads,
) {
    let idx = store
        .index_of(crate::model::params::ParamKey { module: tag, layer, role })
        .expect("gradient for registered parameter");
    grads.accumulate(idx, grad);
}

/// Applies running-statistic updates produced by a training-mode forward pass.
pub fn apply_norm_updates(store: &mut ParamStore, tag: ModuleTag, trace: &SegmentTrace) {
    for (layer, rm, rv) in &trace.norm_updates {
        store
            .set(tag, *layer, ParamRole::RunningMean, rm.clone().into_dyn())
            .expect("running mean registered");
        store
            .set(tag, *layer, ParamRole::RunningVar, rv.clone().into_dyn())
            .expect("running var registered");
    }
}

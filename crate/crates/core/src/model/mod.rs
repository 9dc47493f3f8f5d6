//! The disparity network: declarative architecture plus differentiable
//! forward pass (siamese feature extraction, channel-to-disparity cost
//! volume, hourglass regression, soft-argmax).

pub mod config;
pub mod exec;
pub mod graph;
pub mod params;

use ndarray::Array3;

pub use config::{ModelConfig, ModuleTag, Setting, StereoWidths};
pub use exec::{Mode, SegmentTrace};
pub use graph::{LayerKind, LayerSpec, NodeRef};
pub use params::{Grads, ParamKey, ParamRole, ParamStore};

use crate::error::{Error, Result};
use crate::nn::softargmax;
use crate::nn::T4;

/// Quarter-resolution feature tensor `(B, C, H/4, W/4)`.
#[derive(Debug, Clone)]
pub struct FeatureMap(pub T4);

/// Matching-evidence tensor `(B, d_max/4, H/4, W/4)`.
#[derive(Debug, Clone)]
pub struct CostVolume(pub T4);

/// Per-pixel disparity-bin logits `(B, d_max, H, W)`.
#[derive(Debug, Clone)]
pub struct Logits(pub T4);

/// Per-pixel disparity in pixels `(B, H, W)`; values lie in `[0, d_max-1]`.
#[derive(Debug, Clone)]
pub struct DisparityMap(pub Array3<f32>);

impl Logits {
    pub fn d_max(&self) -> usize {
        self.0.dim().1
    }
}

/// A constructed network: config plus parameters. The forward pass with fixed
/// weights is pure; training and pruning take exclusive (`&mut`) access.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let store = ParamStore::init(&config, seed)?;
        Ok(Model { config, store })
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_param_count()
    }

    fn check_image(&self, name: &str, img: &T4) -> Result<()> {
        let (_, c, h, w) = img.dim();
        if c != self.config.input_channels {
            return Err(Error::shape(
                "channel",
                format!("{name} has {c} channels, model expects {}", self.config.input_channels),
            ));
        }
        let f = self.config.downsample_factor;
        if h % f != 0 {
            return Err(Error::shape("height", format!("{name} height {h} not divisible by {f}")));
        }
        if w % f != 0 {
            return Err(Error::shape("width", format!("{name} width {w} not divisible by {f}")));
        }
        Ok(())
    }

    /// Siamese feature extraction: the same weights process both images.
    pub fn extract_features(&self, left: &T4, right: &T4, mode: Mode) -> Result<(FeatureMap, FeatureMap)> {
        self.check_image("left image", left)?;
        self.check_image("right image", right)?;
        if left.dim() != right.dim() {
            return Err(Error::shape(
                "width",
                format!("left {:?} and right {:?} differ", left.dim(), right.dim()),
            ));
        }
        let l = exec::forward_segment(&self.config, ModuleTag::Feature, &self.store, left, mode)?;
        let r = exec::forward_segment(&self.config, ModuleTag::Feature, &self.store, right, mode)?;
        Ok((FeatureMap(l.outputs.into_iter().last().unwrap()), FeatureMap(r.outputs.into_iter().last().unwrap())))
    }

    /// Channel-to-disparity cost volume over concatenated left/right features.
    pub fn build_cost_volume(&self, f_l: &FeatureMap, f_r: &FeatureMap, mode: Mode) -> Result<CostVolume> {
        if f_l.0.dim() != f_r.0.dim() {
            return Err(Error::shape(
                "channel",
                format!("feature shapes {:?} and {:?} differ", f_l.0.dim(), f_r.0.dim()),
            ));
        }
        let joined = crate::nn::concat_forward(&f_l.0, &f_r.0);
        let t = exec::forward_segment(&self.config, ModuleTag::CostVolume, &self.store, &joined, mode)?;
        Ok(CostVolume(t.outputs.into_iter().last().unwrap()))
    }

    /// Hourglass regression, channel-to-bin projection and 4x bilinear
    /// upsampling: cost volume to full-resolution logits.
    pub fn regress(&self, cost: &CostVolume, mode: Mode) -> Result<Logits> {
        let expect = self.config.d_max / self.config.downsample_factor;
        let got = cost.0.dim().1;
        if self.config.is_stereo() && got != expect {
            return Err(Error::shape(
                "channel",
                format!("cost volume has {got} channels, regression expects {expect}"),
            ));
        }
        let t = exec::forward_segment(&self.config, ModuleTag::Regression, &self.store, &cost.0, mode)?;
        Ok(Logits(t.outputs.into_iter().last().unwrap()))
    }

    /// Full forward pass; in evaluation mode this is deterministic and pure.
    pub fn forward(&self, left: &T4, right: &T4, mode: Mode) -> Result<(Logits, DisparityMap)> {
        let (f_l, f_r) = self.extract_features(left, right, mode)?;
        let cost = self.build_cost_volume(&f_l, &f_r, mode)?;
        let logits = self.regress(&cost, mode)?;
        let disp = soft_argmax(&logits)?;
        Ok((logits, disp))
    }
}

/// Differentiable soft-argmax over the bin axis; bin centers are 0..d_max-1.
pub fn soft_argmax(logits: &Logits) -> Result<DisparityMap> {
    let (d, _) = softargmax::soft_argmax_forward(&logits.0)?;
    Ok(DisparityMap(d))
}

/// Anything that can stand in as the frozen teacher: it only has to produce
/// logits with the student's bin count.
pub trait TeacherModel {
    fn teacher_logits(&self, left: &T4, right: &T4) -> Result<Logits>;
    fn teacher_d_max(&self) -> usize;
}

impl TeacherModel for Model {
    fn teacher_logits(&self, left: &T4, right: &T4) -> Result<Logits> {
        let (logits, _) = self.forward(left, right, Mode::Eval)?;
        Ok(logits)
    }

    fn teacher_d_max(&self) -> usize {
        self.config.d_max
    }
}

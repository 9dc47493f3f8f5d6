//! Model configuration: the declarative description every other subsystem
//! consumes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::graph::{infer_channels, LayerKind, LayerSpec, NodeRef};

/// Which architectural module a layer belongs to, for per-module accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModuleTag {
    Feature,
    CostVolume,
    Regression,
}

impl ModuleTag {
    pub const ALL: [ModuleTag; 3] = [ModuleTag::Feature, ModuleTag::CostVolume, ModuleTag::Regression];

    pub fn name(&self) -> &'static str {
        match self {
            ModuleTag::Feature => "feature extraction",
            ModuleTag::CostVolume => "cost volume construction",
            ModuleTag::Regression => "disparity regression",
        }
    }
}

/// Layer-repetition settings. Setting 3 (two feature stages, one hourglass
/// block) is the shipped network; settings 1 and 2 keep the deeper feature
/// pyramid and stacked hourglasses for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    Setting1,
    Setting2,
    Setting3,
}

impl Setting {
    fn feature_stages(&self) -> usize {
        match self {
            Setting::Setting1 | Setting::Setting2 => 4,
            Setting::Setting3 => 2,
        }
    }

    fn hourglass_blocks(&self) -> usize {
        match self {
            Setting::Setting1 => 3,
            Setting::Setting2 | Setting::Setting3 => 1,
        }
    }
}

/// Channel widths for the stereo family. These are the calibration knobs:
/// the defaults below were chosen so that per-module parameter counts land on
/// the reference budget (feature 0.10 M, cost volume 0.03 M, regression
/// 0.51 M, total 0.64 M).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StereoWidths {
    /// Output width of each feature stage; the first two stages downsample by
    /// stride 2, later stages keep quarter resolution.
    pub stages: Vec<usize>,
    /// Hidden widths of the two intermediate cost-volume convolutions.
    pub cost_hidden: [usize; 2],
    /// Uniform channel width inside the hourglass encoder-decoder.
    pub hourglass: usize,
}

impl StereoWidths {
    /// Calibrated widths for the shipped Setting-3 network.
    pub fn calibrated() -> Self {
        StereoWidths { stages: vec![24, 64], cost_hidden: [12, 24], hourglass: 96 }
    }
}

/// Full declarative model description.
///
/// `feature` runs twice with shared weights (once per image); its two outputs
/// are concatenated along the channel axis and fed to `cost`; `regression`
/// turns the cost volume into per-pixel disparity-bin logits at input
/// resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of disparity bins.
    pub d_max: usize,
    /// Channels of the images the network consumes.
    pub input_channels: usize,
    /// Spatial reduction of the feature maps relative to the input.
    pub downsample_factor: usize,
    /// Layer-repetition setting, when the config comes from the stereo family.
    pub setting: Option<Setting>,
    /// Feature width after the pyramid concatenation.
    pub base_channels: usize,
    pub feature: Vec<LayerSpec>,
    pub cost: Vec<LayerSpec>,
    pub regression: Vec<LayerSpec>,
}

fn push(layers: &mut Vec<LayerSpec>, kind: LayerKind, inputs: Vec<NodeRef>) -> NodeRef {
    layers.push(LayerSpec::new(kind, inputs));
    NodeRef::Node(layers.len() - 1)
}

fn conv_bn_relu(
    layers: &mut Vec<LayerSpec>,
    input: NodeRef,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
) -> NodeRef {
    let c = push(
        layers,
        LayerKind::Conv2d { in_ch, out_ch, kernel: 3, stride, padding: 1 },
        vec![input],
    );
    let n = push(layers, LayerKind::Norm { channels: out_ch }, vec![c]);
    push(layers, LayerKind::Activation, vec![n])
}

/// Residual block: two 3x3 convs with an additive identity skip.
fn residual_block(layers: &mut Vec<LayerSpec>, input: NodeRef, ch: usize) -> NodeRef {
    let mid = conv_bn_relu(layers, input, ch, ch, 1);
    let c2 = push(
        layers,
        LayerKind::Conv2d { in_ch: ch, out_ch: ch, kernel: 3, stride: 1, padding: 1 },
        vec![mid],
    );
    let n2 = push(layers, LayerKind::Norm { channels: ch }, vec![c2]);
    let sum = push(layers, LayerKind::SkipAdd, vec![n2, input]);
    push(layers, LayerKind::Activation, vec![sum])
}

/// Hourglass block: two stride-2 encoder levels and two transposed-conv
/// decoder levels with additive skips; maps `ch` channels to `ch` channels at
/// unchanged resolution.
fn hourglass_block(layers: &mut Vec<LayerSpec>, input: NodeRef, ch: usize, width: usize) -> NodeRef {
    let enc1a = conv_bn_relu(layers, input, ch, width, 2);
    let enc1b = conv_bn_relu(layers, enc1a, width, width, 1);
    let enc2a = conv_bn_relu(layers, enc1b, width, width, 2);
    let enc2b = conv_bn_relu(layers, enc2a, width, width, 1);
    let up1 = push(
        layers,
        LayerKind::TransposeConv2d {
            in_ch: width,
            out_ch: width,
            kernel: 3,
            stride: 2,
            padding: 1,
            match_size_of: Some(enc1b),
        },
        vec![enc2b],
    );
    let up1n = push(layers, LayerKind::Norm { channels: width }, vec![up1]);
    let sum1 = push(layers, LayerKind::SkipAdd, vec![up1n, enc1b]);
    let dec1 = push(layers, LayerKind::Activation, vec![sum1]);
    let up2 = push(
        layers,
        LayerKind::TransposeConv2d {
            in_ch: width,
            out_ch: ch,
            kernel: 3,
            stride: 2,
            padding: 1,
            match_size_of: Some(input),
        },
        vec![dec1],
    );
    let up2n = push(layers, LayerKind::Norm { channels: ch }, vec![up2]);
    let sum2 = push(layers, LayerKind::SkipAdd, vec![up2n, input]);
    push(layers, LayerKind::Activation, vec![sum2])
}

impl ModelConfig {
    /// Stereo network with the given setting and widths.
    pub fn stereo(setting: Setting, d_max: usize, widths: StereoWidths) -> Result<ModelConfig> {
        let stages = setting.feature_stages();
        if widths.stages.len() != stages {
            return Err(Error::Config(format!(
                "{setting:?} needs {stages} stage widths, got {}",
                widths.stages.len()
            )));
        }
        if d_max == 0 || d_max % 4 != 0 {
            return Err(Error::Config(format!("d_max must be a positive multiple of 4, got {d_max}")));
        }

        // Feature pyramid: the first two stages downsample by 2 each, later
        // stages stay at quarter resolution. Every stage output is resampled
        // to quarter resolution and concatenated.
        let mut feature = Vec::new();
        let mut stage_outs: Vec<NodeRef> = Vec::new();
        let mut prev = NodeRef::Input;
        let mut prev_ch = 3usize;
        for (i, &ch) in widths.stages.iter().enumerate() {
            let stride = if i < 2 { 2 } else { 1 };
            let trunk = conv_bn_relu(&mut feature, prev, prev_ch, ch, stride);
            let out = residual_block(&mut feature, trunk, ch);
            stage_outs.push(out);
            prev = out;
            prev_ch = ch;
        }
        // Stage 1 sits at half resolution; bring it down to quarter.
        let s0 = push(
            &mut feature,
            LayerKind::BilinearResize { scale_num: 1, scale_den: 2 },
            vec![stage_outs[0]],
        );
        let mut fused = s0;
        for &s in &stage_outs[1..] {
            fused = push(&mut feature, LayerKind::Concat, vec![fused, s]);
        }
        let base_channels: usize = widths.stages.iter().sum();

        // Channel-to-disparity cost module: three 3x3 convolutions over the
        // concatenated left/right features; the two hidden stages carry
        // norm+activation, the final projection to d_max/4 channels is linear.
        let mut cost = Vec::new();
        let [h1, h2] = widths.cost_hidden;
        let c1 = conv_bn_relu(&mut cost, NodeRef::Input, 2 * base_channels, h1, 1);
        let c2 = conv_bn_relu(&mut cost, c1, h1, h2, 1);
        push(
            &mut cost,
            LayerKind::Conv2d { in_ch: h2, out_ch: d_max / 4, kernel: 3, stride: 1, padding: 1 },
            vec![c2],
        );

        // Regression: stacked hourglass blocks, a channel-to-bin projection
        // from d_max/4 to d_max, and bilinear upsampling back to input size.
        let mut regression = Vec::new();
        let mut hg = NodeRef::Input;
        for _ in 0..setting.hourglass_blocks() {
            hg = hourglass_block(&mut regression, hg, d_max / 4, widths.hourglass);
        }
        let head = push(
            &mut regression,
            LayerKind::Conv2d { in_ch: d_max / 4, out_ch: d_max, kernel: 3, stride: 1, padding: 1 },
            vec![hg],
        );
        push(&mut regression, LayerKind::BilinearResize { scale_num: 4, scale_den: 1 }, vec![head]);

        let config = ModelConfig {
            d_max,
            input_channels: 3,
            downsample_factor: 4,
            setting: Some(setting),
            base_channels,
            feature,
            cost,
            regression,
        };
        config.validate()?;
        Ok(config)
    }

    /// The shipped network: Setting 3 with calibrated widths at 192 bins.
    pub fn setting3() -> ModelConfig {
        ModelConfig::stereo(Setting::Setting3, 192, StereoWidths::calibrated())
            .expect("calibrated setting3 config is valid")
    }

    /// Single-path config (no siamese feature stage, no cost module) for
    /// structural tests and pruning experiments on small hand-built nets.
    pub fn single_path(
        layers: Vec<LayerSpec>,
        input_channels: usize,
        d_max: usize,
    ) -> Result<ModelConfig> {
        let chans = infer_channels(&layers, input_channels)?;
        let out_ch = chans.last().copied().unwrap_or(input_channels);
        let config = ModelConfig {
            d_max,
            input_channels,
            downsample_factor: 1,
            setting: None,
            base_channels: input_channels,
            feature: Vec::new(),
            cost: Vec::new(),
            regression: layers,
        };
        if out_ch != d_max {
            return Err(Error::Config(format!(
                "single-path net ends with {out_ch} channels, d_max is {d_max}"
            )));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn is_stereo(&self) -> bool {
        !self.feature.is_empty()
    }

    pub fn segment(&self, tag: ModuleTag) -> &[LayerSpec] {
        match tag {
            ModuleTag::Feature => &self.feature,
            ModuleTag::CostVolume => &self.cost,
            ModuleTag::Regression => &self.regression,
        }
    }

    pub fn segment_mut(&mut self, tag: ModuleTag) -> &mut Vec<LayerSpec> {
        match tag {
            ModuleTag::Feature => &mut self.feature,
            ModuleTag::CostVolume => &mut self.cost,
            ModuleTag::Regression => &mut self.regression,
        }
    }

    /// Channels entering a segment.
    pub fn segment_input_channels(&self, tag: ModuleTag) -> Result<usize> {
        match tag {
            ModuleTag::Feature => Ok(self.input_channels),
            ModuleTag::CostVolume => {
                let f = infer_channels(&self.feature, self.input_channels)?;
                Ok(2 * f.last().copied().unwrap_or(self.input_channels))
            }
            ModuleTag::Regression => {
                if self.is_stereo() {
                    let cin = self.segment_input_channels(ModuleTag::CostVolume)?;
                    let c = infer_channels(&self.cost, cin)?;
                    Ok(c.last().copied().unwrap_or(cin))
                } else {
                    Ok(self.input_channels)
                }
            }
        }
    }

    /// All layers with their module tag and in-segment index, in execution order.
    pub fn iter_layers(&self) -> impl Iterator<Item = (ModuleTag, usize, &LayerSpec)> {
        ModuleTag::ALL
            .into_iter()
            .flat_map(move |tag| self.segment(tag).iter().enumerate().map(move |(i, l)| (tag, i, l)))
    }

    /// Names of every operation kind appearing in the forward graph.
    pub fn op_inventory(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = self.iter_layers().map(|(_, _, l)| l.kind.name()).collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_max == 0 {
            return Err(Error::Config("d_max must be positive".into()));
        }
        if self.downsample_factor == 0 || self.d_max % self.downsample_factor != 0 {
            return Err(Error::Config(format!(
                "d_max {} not divisible by downsample factor {}",
                self.d_max, self.downsample_factor
            )));
        }
        for tag in ModuleTag::ALL {
            let cin = self.segment_input_channels(tag)?;
            infer_channels(self.segment(tag), cin)?;
        }
        if self.is_stereo() {
            if self.downsample_factor != 4 {
                return Err(Error::Config("stereo configs use downsample factor 4".into()));
            }
            let f = infer_channels(&self.feature, self.input_channels)?;
            let fc = *f.last().unwrap();
            if fc != self.base_channels {
                return Err(Error::Config(format!(
                    "feature output width {fc} disagrees with base_channels {}",
                    self.base_channels
                )));
            }
            let cost_out = {
                let cin = self.segment_input_channels(ModuleTag::CostVolume)?;
                *infer_channels(&self.cost, cin)?.last().unwrap()
            };
            if cost_out != self.d_max / 4 {
                return Err(Error::Config(format!(
                    "cost volume must emit d_max/4 = {} channels, emits {cost_out}",
                    self.d_max / 4
                )));
            }
            let rin = self.segment_input_channels(ModuleTag::Regression)?;
            let r = infer_channels(&self.regression, rin)?;
            if *r.last().unwrap() != self.d_max {
                return Err(Error::Config(format!(
                    "regression must emit d_max = {} channels, emits {}",
                    self.d_max,
                    r.last().unwrap()
                )));
            }
            if self.setting == Some(Setting::Setting3) {
                let stage_count = self
                    .feature
                    .iter()
                    .filter(|l| matches!(l.kind, LayerKind::Conv2d { stride: 2, .. }))
                    .count();
                if stage_count != 2 {
                    return Err(Error::Config(format!(
                        "setting 3 has exactly 2 downsampling feature stages, found {stage_count}"
                    )));
                }
                let tconvs = self
                    .regression
                    .iter()
                    .filter(|l| matches!(l.kind, LayerKind::TransposeConv2d { .. }))
                    .count();
                if tconvs != 2 {
                    return Err(Error::Config(format!(
                        "setting 3 has exactly 1 hourglass block (2 transposed convs), found {tconvs}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, hex-encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setting3_validates_and_hits_the_channel_contract() {
        let cfg = ModelConfig::setting3();
        assert_eq!(cfg.d_max, 192);
        assert_eq!(cfg.base_channels, 88);
        let cost_in = cfg.segment_input_channels(ModuleTag::CostVolume).unwrap();
        assert_eq!(cost_in, 176);
        let reg_in = cfg.segment_input_channels(ModuleTag::Regression).unwrap();
        assert_eq!(reg_in, 48);
    }

    #[test]
    fn op_inventory_is_limited_to_deployable_kinds() {
        let cfg = ModelConfig::setting3();
        let allowed = [
            "conv2d",
            "transpose_conv2d",
            "norm",
            "activation",
            "concat",
            "add",
            "bilinear_interpolation",
        ];
        for op in cfg.op_inventory() {
            assert!(allowed.contains(&op), "unexpected op {op}");
        }
    }

    #[test]
    fn settings_one_and_two_construct() {
        let w = |stages: Vec<usize>| StereoWidths { stages, cost_hidden: [12, 24], hourglass: 96 };
        let s1 = ModelConfig::stereo(Setting::Setting1, 192, w(vec![24, 64, 64, 64])).unwrap();
        let s2 = ModelConfig::stereo(Setting::Setting2, 192, w(vec![24, 64, 64, 64])).unwrap();
        let t = |c: &ModelConfig| {
            c.regression
                .iter()
                .filter(|l| matches!(l.kind, LayerKind::TransposeConv2d { .. }))
                .count()
        };
        assert_eq!(t(&s1), 6); // three hourglass blocks
        assert_eq!(t(&s2), 2);
    }

    #[test]
    fn dmax_must_divide_by_downsample_factor() {
        assert!(ModelConfig::stereo(Setting::Setting3, 190, StereoWidths::calibrated()).is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = ModelConfig::setting3();
        let b = ModelConfig::setting3();
        assert_eq!(a.hash(), b.hash());
        let mut c = ModelConfig::setting3();
        c.d_max = 96;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn json_round_trip_preserves_the_config() {
        let a = ModelConfig::setting3();
        let s = serde_json::to_string(&a).unwrap();
        let b: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}

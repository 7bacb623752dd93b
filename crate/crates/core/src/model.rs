//! Two-stream assembly: an appearance stream on RGB frames and a temporal
//! stream on rendered flow images, combined by gated fusion.

use crate::blocks::{
    Bound, ChannelAttention, ConvLayer, GateMap, GatedFusion, MiniBackbone, MultiLevelFusion, ParamSet, ParamSpec,
    ReadoutHead, SpatialAttention,
};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub const APPEARANCE: &str = "appearance";
pub const TEMPORAL: &str = "temporal";
pub const FUSION: &str = "fusion";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub widths: [usize; 4],
    /// Output channels of the multi-level block.
    pub ml_channels: usize,
    /// Channels of each stream's penultimate features fed to the gate.
    pub gate_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            widths: [8, 16, 32, 64],
            ml_channels: 32,
            gate_channels: 16,
        }
    }
}

impl ModelConfig {
    /// Channels entering channel attention: upsampled stage-4 features
    /// concatenated with the multi-level output.
    pub fn attention_channels(&self) -> usize {
        self.widths[3] + self.ml_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.ml_channels == 0 || self.gate_channels == 0 {
            return Err(Error::Config(format!("channel counts must be positive: {self:?}")));
        }
        if self.attention_channels() % 4 != 0 {
            return Err(Error::Config(format!(
                "widths[3] + ml_channels = {} must be divisible by 4",
                self.attention_channels()
            )));
        }
        Ok(())
    }
}

/// One stream: backbone, spatial attention on the deepest stage, multi-level
/// fusion, channel attention over `concat(upsampled stage 4, multi-level)`,
/// a 1x1 feature projection, and the readout head.
#[derive(Clone, Debug)]
pub struct Stream {
    backbone: MiniBackbone,
    spatial: SpatialAttention,
    multilevel: MultiLevelFusion,
    channel: ChannelAttention,
    feature: ConvLayer,
    readout: ReadoutHead,
}

#[derive(Clone, Copy, Debug)]
pub struct StreamVars {
    /// `[B,1,H,W]` pre-fusion saliency in (0, 1).
    pub saliency: Var,
    /// `[B,Cg,H/2,W/2]` penultimate features.
    pub features: Var,
}

impl Stream {
    pub fn new(prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let p = |s: &str| format!("{prefix}.{s}");
        Ok(Self {
            backbone: MiniBackbone::new(&p("backbone"), cfg.in_channels, cfg.widths)?,
            spatial: SpatialAttention::new(&p("spatial_attention"), cfg.widths[3]),
            multilevel: MultiLevelFusion::new(&p("multi_level"), cfg.widths, cfg.ml_channels)?,
            channel: ChannelAttention::new(&p("channel_attention"), cfg.attention_channels())?,
            feature: ConvLayer::pointwise(p("feature"), cfg.attention_channels(), cfg.gate_channels),
            readout: ReadoutHead::new(&p("readout"), cfg.gate_channels),
        })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = self.backbone.param_specs();
        s.extend(self.spatial.param_specs());
        s.extend(self.multilevel.param_specs());
        s.extend(self.channel.param_specs());
        s.extend(self.feature.specs());
        s.extend(self.readout.param_specs());
        s
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<StreamVars> {
        let [_, _, h, w] = g.value(x).dims4("stream")?;
        let mut stages = self.backbone.forward(g, p, x)?;
        stages[3] = self.spatial.forward(g, p, stages[3])?.output;
        let ml = self.multilevel.forward(g, p, &stages)?;
        let [_, _, h1, w1] = g.value(ml).dims4("stream")?;
        let deep = g.bilinear_upsample(stages[3], h1, w1)?;
        let cat = g.concat_channels(deep, ml)?;
        let attended = self.channel.forward(g, p, cat)?.output;
        let proj = self.feature.forward(g, p, attended)?;
        let features = g.relu(proj);
        let saliency = self.readout.forward(g, p, features, h, w)?;
        Ok(StreamVars { saliency, features })
    }
}

#[derive(Clone, Debug)]
pub struct TwoStreamModel {
    config: ModelConfig,
    appearance: Stream,
    temporal: Stream,
    fusion: GatedFusion,
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub fused: Var,
    pub gate: Var,
    pub gate_temporal: Var,
    pub appearance: Var,
    pub temporal: Var,
    pub gated_appearance: Var,
    pub gated_temporal: Var,
}

/// Materialized outputs of a forward pass, all `[B,1,H,W]`.
#[derive(Clone, Debug)]
pub struct StreamOutputs {
    pub appearance: Tensor<f32>,
    pub temporal: Tensor<f32>,
    pub gated_appearance: Tensor<f32>,
    pub gated_temporal: Tensor<f32>,
    pub fused: Tensor<f32>,
    pub gate: GateMap,
}

impl TwoStreamModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            appearance: Stream::new(APPEARANCE, &config)?,
            temporal: Stream::new(TEMPORAL, &config)?,
            fusion: GatedFusion::new(FUSION, config.gate_channels),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fusion(&self) -> &GatedFusion {
        &self.fusion
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = self.appearance.param_specs();
        s.extend(self.temporal.param_specs());
        s.extend(self.fusion.param_specs());
        s
    }

    pub fn init_params(&self, seed: u64) -> ParamSet {
        ParamSet::init(&self.param_specs(), seed)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, frames: Var, flows: Var) -> Result<ModelVars> {
        let fs = g.value(frames).dims4("model_forward")?;
        if g.value(flows).shape() != fs {
            return Err(Error::shape(
                "model_forward",
                format!("frames {fs:?} and flow images {:?} differ", g.value(flows).shape()),
            ));
        }
        let [_, _, h, w] = fs;
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::shape("model_forward", format!("input {h}x{w} is not divisible by 16")));
        }
        let a = self.appearance.forward(g, p, frames)?;
        let t = self.temporal.forward(g, p, flows)?;
        let fa = g.bilinear_upsample(a.features, h, w)?;
        let ft = g.bilinear_upsample(t.features, h, w)?;
        let out = self.fusion.forward(g, p, a.saliency, fa, t.saliency, ft)?;
        Ok(ModelVars {
            fused: out.fused,
            gate: out.gate,
            gate_temporal: out.gate_temporal,
            appearance: a.saliency,
            temporal: t.saliency,
            gated_appearance: out.gated_appearance,
            gated_temporal: out.gated_temporal,
        })
    }

    /// Inference on `[B,3,H,W]` batches.
    pub fn predict(&self, params: &ParamSet, frames: &Tensor<f32>, flows: &Tensor<f32>) -> Result<StreamOutputs> {
        let mut g = Graph::<f32>::new();
        let p = Bound::bind(&mut g, params);
        let fr = g.constant(frames.clone());
        let fl = g.constant(flows.clone());
        let v = self.forward(&mut g, &p, fr, fl)?;
        Ok(StreamOutputs {
            appearance: g.value(v.appearance).clone(),
            temporal: g.value(v.temporal).clone(),
            gated_appearance: g.value(v.gated_appearance).clone(),
            gated_temporal: g.value(v.gated_temporal).clone(),
            fused: g.value(v.fused).clone(),
            gate: GateMap::new(g.value(v.gate).clone())?,
        })
    }
}

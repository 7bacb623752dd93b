use super::{join, Bound, ConvLayer, LinearLayer, ParamSpec};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// Per-pixel reweighting: `x * sigmoid(conv1x1(x))`, the weight map
/// broadcast over channels.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    channels: usize,
    conv: ConvLayer,
}

#[derive(Clone, Copy, Debug)]
pub struct SpatialAttentionOutput {
    pub output: Var,
    /// `[B,1,H,W]` weights in (0, 1).
    pub weights: Var,
}

impl SpatialAttention {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            channels,
            conv: ConvLayer::pointwise(join(prefix, "conv"), channels, 1).gating(),
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.conv.specs()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<SpatialAttentionOutput> {
        let [_, c, _, _] = g.value(x).dims4("spatial_attention")?;
        if c != self.channels {
            return Err(Error::shape(
                "spatial_attention",
                format!("input has {c} channels, block configured for {}", self.channels),
            ));
        }
        let logits = self.conv.forward(g, p, x)?;
        let weights = g.sigmoid(logits);
        let output = g.hadamard(x, weights)?;
        Ok(SpatialAttentionOutput { output, weights })
    }
}

/// Per-channel reweighting through a pooled bottleneck:
/// `w = relu(fc2(relu(fc1(avgpool(x)))))`, output `x * w`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    channels: usize,
    fc1: LinearLayer,
    fc2: LinearLayer,
}

#[derive(Clone, Copy, Debug)]
pub struct ChannelAttentionOutput {
    pub output: Var,
    /// Bottleneck activations, `[B, C/4]`.
    pub hidden: Var,
    /// Second-layer activations, `[B, C]`.
    pub scores: Var,
    /// `scores` reshaped to `[B,C,1,1]`.
    pub weights: Var,
}

impl ChannelAttention {
    pub fn new(prefix: &str, channels: usize) -> Result<Self> {
        if channels == 0 || channels % 4 != 0 {
            return Err(Error::Config(format!(
                "channel attention needs a channel count divisible by 4, got {channels}"
            )));
        }
        let reduced = channels / 4;
        Ok(Self {
            channels,
            fc1: LinearLayer {
                name: join(prefix, "fc1"),
                in_features: channels,
                out_features: reduced,
            },
            fc2: LinearLayer {
                name: join(prefix, "fc2"),
                in_features: reduced,
                out_features: channels,
            },
        })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = self.fc1.specs();
        s.extend(self.fc2.specs());
        s
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<ChannelAttentionOutput> {
        let [b, c, _, _] = g.value(x).dims4("channel_attention")?;
        if c != self.channels {
            return Err(Error::shape(
                "channel_attention",
                format!("input has {c} channels, block configured for {}", self.channels),
            ));
        }
        let pooled = g.global_avg_pool(x)?;
        let h = self.fc1.forward(g, p, pooled)?;
        let hidden = g.relu(h);
        let s = self.fc2.forward(g, p, hidden)?;
        let scores = g.relu(s);
        let weights = g.reshape(scores, vec![b, c, 1, 1])?;
        let output = g.hadamard(x, weights)?;
        Ok(ChannelAttentionOutput {
            output,
            hidden,
            scores,
            weights,
        })
    }
}

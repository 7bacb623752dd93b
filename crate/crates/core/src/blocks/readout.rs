use super::{join, Bound, ConvLayer, ParamSpec};
use crate::error::Result;
use crate::tensor::{Graph, Scalar, Var};

/// Single-channel saliency map at input resolution:
/// `sigmoid(upsample(conv1x1(features)))`.
#[derive(Clone, Debug)]
pub struct ReadoutHead {
    conv: ConvLayer,
}

impl ReadoutHead {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Self {
            conv: ConvLayer::pointwise(join(prefix, "conv"), channels, 1),
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.conv.specs()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let logits = self.conv.forward(g, p, x)?;
        let up = g.bilinear_upsample(logits, out_h, out_w)?;
        Ok(g.sigmoid(up))
    }
}

use super::{join, Bound, ConvLayer, ParamSpec};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Gated fusion of the two streams.
///
/// The gate `P = sigmoid(conv1x1(concat(F_A, F_T)))` is the appearance weight
/// `G_A`; the temporal weight is `G_T = 1 - P`. The fused map is
/// `S_A * G_A + S_T * G_T`.
#[derive(Clone, Debug)]
pub struct GatedFusion {
    feature_channels: usize,
    conv: ConvLayer,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub fused: Var,
    /// Gate probability `P` (appearance weight), `[B,1,H,W]`.
    pub gate: Var,
    /// `1 - P`.
    pub gate_temporal: Var,
    pub gated_appearance: Var,
    pub gated_temporal: Var,
}

impl GatedFusion {
    pub fn new(prefix: &str, feature_channels: usize) -> Self {
        Self {
            feature_channels,
            conv: ConvLayer::pointwise(join(prefix, "gate"), 2 * feature_channels, 1).gating(),
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.conv.specs()
    }

    pub fn bias_name(&self) -> String {
        self.conv.bias_name()
    }

    pub fn weight_name(&self) -> String {
        self.conv.weight_name()
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        s_a: Var,
        f_a: Var,
        s_t: Var,
        f_t: Var,
    ) -> Result<FusionOutput> {
        const OP: &str = "gated_fusion";
        let [b, c, h, w] = g.value(s_a).dims4(OP)?;
        if c != 1 || g.value(s_t).shape() != [b, 1, h, w] {
            return Err(Error::shape(
                OP,
                format!(
                    "saliency maps must both be [B,1,H,W], got {:?} and {:?}",
                    g.value(s_a).shape(),
                    g.value(s_t).shape()
                ),
            ));
        }
        let expect = [b, self.feature_channels, h, w];
        for f in [f_a, f_t] {
            if g.value(f).shape() != expect {
                return Err(Error::shape(
                    OP,
                    format!("feature map {:?} does not match {expect:?}", g.value(f).shape()),
                ));
            }
        }
        let cat = g.concat_channels(f_a, f_t)?;
        let logits = self.conv.forward(g, p, cat)?;
        let gate = g.sigmoid(logits);
        let gate_temporal = g.one_minus(gate);
        let gated_appearance = g.hadamard(s_a, gate)?;
        let gated_temporal = g.hadamard(s_t, gate_temporal)?;
        let fused = g.add(gated_appearance, gated_temporal)?;
        Ok(FusionOutput {
            fused,
            gate,
            gate_temporal,
            gated_appearance,
            gated_temporal,
        })
    }
}

/// Materialized gate probabilities for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct GateMap {
    p: Tensor<f32>,
}

impl GateMap {
    pub fn new(p: Tensor<f32>) -> Result<Self> {
        let [_, c, _, _] = p.dims4("gate_map")?;
        if c != 1 {
            return Err(Error::shape("gate_map", format!("expected one channel, got {:?}", p.shape())));
        }
        if p.data().iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::contract("gate_map", "gate probabilities must lie strictly inside (0, 1)"));
        }
        Ok(Self { p })
    }

    /// `G_A = P`.
    pub fn appearance(&self) -> &Tensor<f32> {
        &self.p
    }

    /// `G_T = 1 - P`.
    pub fn temporal(&self) -> Tensor<f32> {
        self.p.map(|v| 1.0 - v)
    }

    /// Mean of `P` over the rectangle `[x, x + w) x [y, y + h)` of batch item `index`.
    pub fn region_mean(&self, index: usize, x: usize, y: usize, w: usize, h: usize) -> Result<f64> {
        let [b, _, height, width] = self.p.dims4("gate_map")?;
        if index >= b || w == 0 || h == 0 || x + w > width || y + h > height {
            return Err(Error::shape(
                "gate_map",
                format!("region {x},{y},{w},{h} outside {width}x{height} (item {index} of {b})"),
            ));
        }
        let plane = &self.p.data()[index * height * width..][..height * width];
        let sum: f64 = (y..y + h)
            .flat_map(|r| plane[r * width + x..r * width + x + w].iter())
            .map(|&v| v as f64)
            .sum();
        Ok(sum / (w * h) as f64)
    }
}

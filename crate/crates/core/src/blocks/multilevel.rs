use super::{join, Bound, ConvLayer, ParamSpec};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// Top-down fusion of the backbone pyramid. Starting from the deepest
/// stage, the running map is upsampled to the next finer stage, concatenated
/// with it, and mixed by one 1x1 convolution.
#[derive(Clone, Debug)]
pub struct MultiLevelFusion {
    widths: [usize; 4],
    out_channels: usize,
    /// Fusion convolutions for stages 3, 2, 1, in application order.
    levels: Vec<ConvLayer>,
}

impl MultiLevelFusion {
    pub fn new(prefix: &str, widths: [usize; 4], out_channels: usize) -> Result<Self> {
        if out_channels == 0 {
            return Err(Error::Config("multi-level block needs at least one output channel".into()));
        }
        let mut levels = Vec::with_capacity(3);
        let mut running = widths[3];
        for s in (0..3).rev() {
            levels.push(ConvLayer::pointwise(
                join(prefix, &format!("level{}", s + 1)),
                running + widths[s],
                out_channels,
            ));
            running = out_channels;
        }
        Ok(Self {
            widths,
            out_channels,
            levels,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.levels.iter().flat_map(ConvLayer::specs).collect()
    }

    /// `stages` are finest first. Output has the spatial extent of stage 1.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, stages: &[Var; 4]) -> Result<Var> {
        let dims = stages
            .iter()
            .map(|&v| g.value(v).dims4("multi_level_fuse"))
            .collect::<Result<Vec<_>>>()?;
        for (s, d) in dims.iter().enumerate() {
            if d[0] != dims[0][0] || d[1] != self.widths[s] {
                return Err(Error::shape(
                    "multi_level_fuse",
                    format!("stage {} has shape {d:?}, expected {} channels", s + 1, self.widths[s]),
                ));
            }
            if s > 0 && (d[2] > dims[s - 1][2] || d[3] > dims[s - 1][3]) {
                return Err(Error::shape(
                    "multi_level_fuse",
                    format!("stage {} ({d:?}) is larger than stage {}", s + 1, s),
                ));
            }
        }
        let mut f = stages[3];
        for (conv, s) in self.levels.iter().zip((0..3).rev()) {
            let [_, _, h, w] = dims[s];
            let up = g.bilinear_upsample(f, h, w)?;
            let cat = g.concat_channels(up, stages[s])?;
            f = conv.forward(g, p, cat)?;
        }
        Ok(f)
    }
}

use super::{join, Bound, ConvLayer, ParamSpec};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// Four residual stages, each `conv3x3/s2 -> relu -> conv3x3 -> +skip -> relu`.
/// The skip is the post-ReLU output of the strided entry convolution, so the
/// residual branch needs no projection.
#[derive(Clone, Debug)]
pub struct MiniBackbone {
    prefix: String,
    in_channels: usize,
    widths: [usize; 4],
}

impl MiniBackbone {
    pub fn new(prefix: &str, in_channels: usize, widths: [usize; 4]) -> Result<Self> {
        if in_channels == 0 || widths[0] == 0 || widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "backbone widths must be positive and strictly increasing, got {widths:?}"
            )));
        }
        Ok(Self {
            prefix: prefix.to_owned(),
            in_channels,
            widths,
        })
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    fn stage_layers(&self, s: usize) -> (ConvLayer, ConvLayer) {
        let cin = if s == 0 { self.in_channels } else { self.widths[s - 1] };
        let cout = self.widths[s];
        let stage = join(&self.prefix, &format!("stage{}", s + 1));
        (
            ConvLayer::new(format!("{stage}.conv1"), cin, cout, 3, 2),
            ConvLayer::new(format!("{stage}.conv2"), cout, cout, 3, 1),
        )
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        (0..4)
            .flat_map(|s| {
                let (a, b) = self.stage_layers(s);
                a.specs().into_iter().chain(b.specs())
            })
            .collect()
    }

    /// Returns the four stage outputs, finest first. Stage `s` (1-based) has
    /// spatial extent `H / 2^s`; the input extent must be divisible by 16.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<[Var; 4]> {
        let [_, c, h, w] = g.value(x).dims4("backbone")?;
        if c != self.in_channels {
            return Err(Error::shape(
                "backbone",
                format!("input has {c} channels, backbone expects {}", self.in_channels),
            ));
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::shape("backbone", format!("input {h}x{w} is not divisible by 16")));
        }
        let mut cur = x;
        let mut out = [x; 4];
        for (s, slot) in out.iter_mut().enumerate() {
            let (entry, body) = self.stage_layers(s);
            let e = entry.forward(g, p, cur)?;
            let skip = g.relu(e);
            let r = body.forward(g, p, skip)?;
            let sum = g.add(r, skip)?;
            cur = g.relu(sum);
            *slot = cur;
        }
        Ok(out)
    }
}

//! Parameterized, differentiable building blocks of the saliency network.
//!
//! Every block owns only its configuration and a name prefix. Parameters
//! live in a [`ParamSet`] keyed by dotted names (`appearance.backbone.stage1.conv1.weight`)
//! and are bound onto a [`Graph`] per forward pass with [`Bound`].

mod attention;
mod backbone;
mod fusion;
mod multilevel;
mod readout;

use indexmap::IndexMap;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use attention::{ChannelAttention, ChannelAttentionOutput, SpatialAttention, SpatialAttentionOutput};
pub use backbone::MiniBackbone;
pub use fusion::{FusionOutput, GateMap, GatedFusion};
pub use multilevel::MultiLevelFusion;
pub use readout::ReadoutHead;

/// Initialization bound for weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitScale {
    /// `sqrt(6 / fan_in)`, for layers that feed a ReLU.
    #[default]
    Relu,
    /// `sqrt(1 / fan_in)`, for gating sigmoids (attention weights, fusion
    /// gate), so initial gates start away from saturation.
    Unit,
}

/// Declared parameter: name, shape, and fan-in for initialization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub init: InitScale,
}

/// Ordered named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor<f32>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uniform initialization in `[-a, a]`, drawn in declaration order from a
    /// seeded ChaCha8 stream. Weights use the bound of their [`InitScale`],
    /// biases `a = sqrt(1 / fan_in)`.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = Self::new();
        for spec in specs {
            let gain = match spec.init {
                InitScale::Relu if spec.shape.len() > 1 => 6.0,
                _ => 1.0,
            };
            let a = (gain / spec.fan_in.max(1) as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-a, a);
            let t = Tensor::from_fn(&spec.shape, |_| dist.sample(&mut rng));
            set.insert(spec.name.clone(), t);
        }
        set
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn insert(&mut self, name: String, value: Tensor<f32>) -> Option<Tensor<f32>> {
        self.entries.insert(name, value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<f32>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn to_named_vec(&self) -> Vec<(String, Tensor<f32>)> {
        self.entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Checks that every spec is present with the declared shape.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            match self.get(&spec.name) {
                None => return Err(Error::Config(format!("missing parameter {}", spec.name))),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Config(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor<f32>)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<f32>)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Parameters registered as leaves on one graph.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &ParamSet) -> Self {
        Self {
            vars: params
                .iter()
                .map(|(name, t)| (name.clone(), g.param(t.cast())))
                .collect(),
        }
    }

    /// Like [`Bound::bind`], but parameters rejected by `trainable` enter the
    /// graph as constants and get zero gradients.
    pub fn bind_where<T: Scalar>(g: &mut Graph<T>, params: &ParamSet, trainable: impl Fn(&str) -> bool) -> Self {
        Self {
            vars: params
                .iter()
                .map(|(name, t)| {
                    let v = if trainable(name) { g.param(t.cast()) } else { g.constant(t.cast()) };
                    (name.clone(), v)
                })
                .collect(),
        }
    }

    /// Pairs names with already-created leaves, in order.
    pub fn from_vars<'a>(names: impl IntoIterator<Item = &'a str>, vars: &[Var]) -> Self {
        Self {
            vars: names.into_iter().map(str::to_owned).zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter {name} is not bound")))
    }

    /// Gradients of all bound parameters after `backward`, as 32-bit tensors.
    pub fn grads<T: Scalar>(&self, g: &Graph<T>) -> ParamSet {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let grad = g
                    .grad(v)
                    .map(Tensor::cast)
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()));
                (name.clone(), grad)
            })
            .collect()
    }
}

/// Square convolution with bias.
#[derive(Clone, Debug)]
pub(crate) struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub init: InitScale,
}

impl ConvLayer {
    pub fn new(name: String, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            init: InitScale::Relu,
        }
    }

    /// Same layer, initialized as a gate.
    pub fn gating(self) -> Self {
        Self {
            init: InitScale::Unit,
            ..self
        }
    }

    pub fn pointwise(name: String, in_channels: usize, out_channels: usize) -> Self {
        Self::new(name, in_channels, out_channels, 1, 1)
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        vec![
            ParamSpec {
                name: self.weight_name(),
                shape: vec![self.out_channels, self.in_channels, self.kernel, self.kernel],
                fan_in,
                init: self.init,
            },
            ParamSpec {
                name: self.bias_name(),
                shape: vec![self.out_channels],
                fan_in,
                init: InitScale::Unit,
            },
        ]
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let w = p.get(&self.weight_name())?;
        let b = p.get(&self.bias_name())?;
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LinearLayer {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearLayer {
    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec {
                name: format!("{}.weight", self.name),
                shape: vec![self.out_features, self.in_features],
                fan_in: self.in_features,
                init: InitScale::Relu,
            },
            ParamSpec {
                name: format!("{}.bias", self.name),
                shape: vec![self.out_features],
                fan_in: self.in_features,
                init: InitScale::Unit,
            },
        ]
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let w = p.get(&format!("{}.weight", self.name))?;
        let b = p.get(&format!("{}.bias", self.name))?;
        g.fully_connected(x, w, b)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

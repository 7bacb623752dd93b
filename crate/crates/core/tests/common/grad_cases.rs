//! Finite-difference cases for every tape op and every block. Shared by the
//! core gradient tests and the acceptance target.

use gatedsal_core::blocks::{
    ChannelAttention, GatedFusion, MiniBackbone, MultiLevelFusion, ParamSet, ReadoutHead, SpatialAttention,
};
use gatedsal_core::blocks::{Bound, ParamSpec};
use gatedsal_core::tensor::{grad_check, Differentiable, GradCheckConfig, GradCheckReport, Graph, Scalar, Tensor, Var};
use gatedsal_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed projection weights so every output coordinate reaches the loss with
/// a different coefficient.
fn project<T: Scalar>(g: &mut Graph<T>, v: Var) -> Result<Var> {
    let shape = g.value(v).shape().to_vec();
    let w = g.constant(Tensor::from_fn(&shape, |i| T::of((i as f64 * 0.7311 + 0.3).sin())));
    let prod = g.hadamard(v, w)?;
    Ok(g.sum(prod))
}

fn project_all<T: Scalar>(g: &mut Graph<T>, vs: &[Var]) -> Result<Var> {
    let mut total = project(g, vs[0])?;
    for &v in &vs[1..] {
        let s = project(g, v)?;
        total = g.add(total, s)?;
    }
    Ok(total)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Values bounded away from zero, so ReLU kinks stay outside the FD step.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| {
        let m: f32 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

#[derive(Clone, Copy, Debug)]
enum OpCase {
    Conv { stride: usize, padding: usize },
    Upsample(usize, usize),
    Concat,
    Sigmoid,
    Relu,
    Add,
    Hadamard,
    HadamardMap,
    HadamardVec,
    ScalarMul,
    AddScalar,
    OneMinus,
    AvgPool,
    FullyConnected,
    Reshape,
    KlLoss,
    NssLoss,
}

struct OpObjective(OpCase);

fn density<T: Scalar>(batch: usize, n: usize) -> Tensor<T> {
    let raw: Vec<f64> = (0..batch * n).map(|i| 1.0 + (i as f64 * 1.37).sin()).collect();
    let mut out = Vec::with_capacity(raw.len());
    for chunk in raw.chunks(n) {
        let s: f64 = chunk.iter().sum();
        out.extend(chunk.iter().map(|v| T::of(v / s)));
    }
    Tensor::new(vec![batch, 1, 4, 4], out).unwrap()
}

fn fixations<T: Scalar>(batch: usize) -> Tensor<T> {
    Tensor::from_fn(&[batch, 1, 4, 4], |i| if i % 16 == 5 || i % 16 == 11 || i == 30 { T::one() } else { T::zero() })
}

impl Differentiable for OpObjective {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> Result<Var> {
        let out = match self.0 {
            OpCase::Conv { stride, padding } => g.conv2d(p[0], p[1], p[2], stride, padding)?,
            OpCase::Upsample(h, w) => g.bilinear_upsample(p[0], h, w)?,
            OpCase::Concat => g.concat_channels(p[0], p[1])?,
            OpCase::Sigmoid => g.sigmoid(p[0]),
            OpCase::Relu => g.relu(p[0]),
            OpCase::Add => g.add(p[0], p[1])?,
            OpCase::Hadamard | OpCase::HadamardMap | OpCase::HadamardVec => g.hadamard(p[0], p[1])?,
            OpCase::ScalarMul => g.scalar_mul(p[0], T::of(-1.75)),
            OpCase::AddScalar => g.add_scalar(p[0], T::of(0.4)),
            OpCase::OneMinus => g.one_minus(p[0]),
            OpCase::AvgPool => g.global_avg_pool(p[0])?,
            OpCase::FullyConnected => g.fully_connected(p[0], p[1], p[2])?,
            OpCase::Reshape => g.reshape(p[0], vec![2, 12])?,
            OpCase::KlLoss => {
                let s = g.sigmoid(p[0]);
                return g.kl_loss(s, density(2, 16), T::of(1e-8));
            }
            OpCase::NssLoss => return g.nss_loss(p[0], fixations(2), T::of(1e-8)),
        };
        project(g, out)
    }
}

/// Gradient reports for every tape op, inputs drawn from `seed`.
pub fn op_reports(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let cases: Vec<(&str, OpCase, Vec<Tensor<f32>>)> = vec![
        (
            "conv2d 3x3 stride 1",
            OpCase::Conv { stride: 1, padding: 1 },
            vec![random(r, &[2, 3, 5, 6], 1.0), random(r, &[4, 3, 3, 3], 0.5), random(r, &[4], 0.5)],
        ),
        (
            "conv2d 3x3 stride 2",
            OpCase::Conv { stride: 2, padding: 1 },
            vec![random(r, &[2, 3, 7, 6], 1.0), random(r, &[4, 3, 3, 3], 0.5), random(r, &[4], 0.5)],
        ),
        (
            "conv2d 1x1",
            OpCase::Conv { stride: 1, padding: 0 },
            vec![random(r, &[2, 5, 3, 4], 1.0), random(r, &[2, 5, 1, 1], 0.5), random(r, &[2], 0.5)],
        ),
        ("bilinear up", OpCase::Upsample(7, 9), vec![random(r, &[2, 3, 3, 4], 1.0)]),
        ("concat", OpCase::Concat, vec![random(r, &[2, 2, 3, 3], 1.0), random(r, &[2, 3, 3, 3], 1.0)]),
        ("sigmoid", OpCase::Sigmoid, vec![random(r, &[2, 3, 4, 4], 4.0)]),
        ("relu", OpCase::Relu, vec![off_zero(r, &[2, 3, 4, 4])]),
        ("add", OpCase::Add, vec![random(r, &[2, 3, 4, 4], 1.0), random(r, &[2, 3, 4, 4], 1.0)]),
        ("hadamard", OpCase::Hadamard, vec![random(r, &[2, 3, 4, 4], 1.0), random(r, &[2, 3, 4, 4], 1.0)]),
        (
            "hadamard map broadcast",
            OpCase::HadamardMap,
            vec![random(r, &[2, 3, 4, 4], 1.0), random(r, &[2, 1, 4, 4], 1.0)],
        ),
        (
            "hadamard vector broadcast",
            OpCase::HadamardVec,
            vec![random(r, &[2, 3, 1, 1], 1.0), random(r, &[2, 3, 4, 4], 1.0)],
        ),
        ("scalar_mul", OpCase::ScalarMul, vec![random(r, &[2, 3, 4, 4], 1.0)]),
        ("add_scalar", OpCase::AddScalar, vec![random(r, &[2, 3, 4, 4], 1.0)]),
        ("one_minus", OpCase::OneMinus, vec![random(r, &[2, 1, 4, 4], 1.0)]),
        ("global_avg_pool", OpCase::AvgPool, vec![random(r, &[2, 3, 4, 5], 1.0)]),
        (
            "fully_connected",
            OpCase::FullyConnected,
            vec![random(r, &[2, 6], 1.0), random(r, &[3, 6], 0.5), random(r, &[3], 0.5)],
        ),
        ("reshape", OpCase::Reshape, vec![random(r, &[2, 3, 2, 2], 1.0)]),
        ("kl_loss", OpCase::KlLoss, vec![random(r, &[2, 1, 4, 4], 2.0)]),
        ("nss_loss", OpCase::NssLoss, vec![random(r, &[2, 1, 4, 4], 1.0)]),
    ];
    cases
        .into_iter()
        .map(|(name, case, inputs)| {
            let named: Vec<(String, Tensor<f32>)> =
                inputs.into_iter().enumerate().map(|(i, t)| (format!("input{i}"), t)).collect();
            Ok((name.to_owned(), grad_check(&OpObjective(case), &named, cfg)?))
        })
        .collect()
}

#[derive(Clone, Debug)]
enum Block {
    Backbone(MiniBackbone),
    Spatial(SpatialAttention),
    Channel(ChannelAttention),
    MultiLevel(MultiLevelFusion),
    Readout(ReadoutHead),
    Fusion(GatedFusion),
}

struct BlockObjective {
    block: Block,
    names: Vec<String>,
}

const WIDTHS: [usize; 4] = [4, 6, 8, 12];

impl Differentiable for BlockObjective {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var]) -> Result<Var> {
        let n = self.names.len();
        let bound = Bound::from_vars(self.names.iter().map(String::as_str), &p[..n]);
        let x = &p[n..];
        match &self.block {
            Block::Backbone(b) => {
                let stages = b.forward(g, &bound, x[0])?;
                project_all(g, &stages)
            }
            Block::Spatial(b) => {
                let o = b.forward(g, &bound, x[0])?;
                project(g, o.output)
            }
            Block::Channel(b) => {
                let o = b.forward(g, &bound, x[0])?;
                project(g, o.output)
            }
            Block::MultiLevel(b) => {
                let o = b.forward(g, &bound, &[x[0], x[1], x[2], x[3]])?;
                project(g, o)
            }
            Block::Readout(b) => {
                let o = b.forward(g, &bound, x[0], 8, 10)?;
                project(g, o)
            }
            Block::Fusion(b) => {
                let o = b.forward(g, &bound, x[0], x[1], x[2], x[3])?;
                project(g, o.fused)
            }
        }
    }
}

fn specs_of(block: &Block) -> Vec<ParamSpec> {
    match block {
        Block::Backbone(b) => b.param_specs(),
        Block::Spatial(b) => b.param_specs(),
        Block::Channel(b) => b.param_specs(),
        Block::MultiLevel(b) => b.param_specs(),
        Block::Readout(b) => b.param_specs(),
        Block::Fusion(b) => b.param_specs(),
    }
}

/// Gradient reports for every block, with respect to its parameters and
/// its inputs.
pub fn block_reports(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = &mut rng;
    let pos = |r: &mut ChaCha8Rng, shape: &[usize]| Tensor::from_fn(shape, |_| r.gen_range(0.05f32..1.0));
    let cases: Vec<(&str, Block, Vec<Tensor<f32>>)> = vec![
        ("backbone", Block::Backbone(MiniBackbone::new("bb", 3, WIDTHS)?), vec![random(r, &[1, 3, 16, 16], 1.0)]),
        ("spatial attention", Block::Spatial(SpatialAttention::new("sa", 6)), vec![random(r, &[2, 6, 3, 4], 1.0)]),
        ("channel attention", Block::Channel(ChannelAttention::new("ca", 8)?), vec![random(r, &[2, 8, 3, 3], 1.0)]),
        (
            "multi-level fusion",
            Block::MultiLevel(MultiLevelFusion::new("ml", WIDTHS, 5)?),
            vec![
                random(r, &[1, 4, 8, 8], 1.0),
                random(r, &[1, 6, 4, 4], 1.0),
                random(r, &[1, 8, 2, 2], 1.0),
                random(r, &[1, 12, 1, 1], 1.0),
            ],
        ),
        ("readout", Block::Readout(ReadoutHead::new("ro", 5)), vec![random(r, &[2, 5, 4, 5], 1.0)]),
        (
            "gated fusion",
            Block::Fusion(GatedFusion::new("gf", 3)),
            vec![pos(r, &[2, 1, 4, 4]), random(r, &[2, 3, 4, 4], 1.0), pos(r, &[2, 1, 4, 4]), random(r, &[2, 3, 4, 4], 1.0)],
        ),
    ];
    cases
        .into_iter()
        .map(|(name, block, inputs)| {
            let params = ParamSet::init(&specs_of(&block), seed);
            let mut named = params.to_named_vec();
            let names = named.iter().map(|(n, _)| n.clone()).collect();
            named.extend(inputs.into_iter().enumerate().map(|(i, t)| (format!("input{i}"), t)));
            Ok((name.to_owned(), grad_check(&BlockObjective { block, names }, &named, cfg)?))
        })
        .collect()
}

/// Stream maps entirely within this distance of 0 or 1 vary below f32
/// resolution; a gradient check at such a point tests rounding, not the
/// backward pass.
pub const SATURATION_MARGIN: f32 = 1e-2;

/// Model, initial parameters and a two-sample random batch for `seed`.
pub fn model_case(
    seed: u64,
    size: usize,
) -> Result<(gatedsal_core::model::TwoStreamModel, ParamSet, gatedsal_core::train::Batch)> {
    use gatedsal_core::model::{ModelConfig, TwoStreamModel};
    use gatedsal_core::synth::random_samples;
    use gatedsal_core::train::Batch;

    let model = TwoStreamModel::new(ModelConfig::default())?;
    let params = model.init_params(seed);
    let samples = random_samples(size, size, 2, seed, size as f64 / 8.0)?;
    let batch = Batch::new(&samples.iter().collect::<Vec<_>>())?;
    Ok((model, params, batch))
}

/// False when either stream's initial map, or the gate, is saturated on a
/// sample.
pub fn resolvable(seed: u64, size: usize) -> Result<bool> {
    let (model, params, batch) = model_case(seed, size)?;
    let out = model.predict(&params, &batch.frames, &batch.flows)?;
    let plane = size * size;
    Ok([&out.appearance, &out.temporal, out.gate.appearance()].iter().all(|t| {
        t.data().chunks(plane).all(|m| {
            let lo = m.iter().copied().fold(f32::MAX, f32::min);
            let hi = m.iter().copied().fold(f32::MIN, f32::max);
            hi >= SATURATION_MARGIN && lo <= 1.0 - SATURATION_MARGIN
        })
    }))
}

/// End-to-end check of the combined loss through the full model on a
/// two-sample random batch.
pub fn model_report(seed: u64, size: usize, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    use gatedsal_core::loss::LossConfig;
    use gatedsal_core::train::check_model_gradients;

    let (model, params, batch) = model_case(seed, size)?;
    check_model_gradients(&model, &params, &batch, &LossConfig::default(), cfg)
}

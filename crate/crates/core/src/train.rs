//! Training loop.

use std::io::Write;
use std::path::Path;

use crate::blocks::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::io::checkpoint::model_config_from_kv;
use crate::io::{KeyValues, TrainSample};
use crate::loss::{combined_on_graph, LossConfig};
use crate::model::{ModelConfig, TwoStreamModel, FUSION};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{grad_check, Differentiable, GradCheckConfig, GradCheckReport, Graph, Scalar, Tensor, Var};

/// Everything a training run needs besides data and seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub steps: u64,
    /// Steps of single-stream training for each stream before joint
    /// training. Each stream is fitted on its own output with a fresh
    /// optimizer; these steps are not part of the loss log.
    pub pretrain_steps: u64,
    /// Base learning rate of the single-stream phase; `None` uses `adam.lr`.
    pub pretrain_lr: Option<f64>,
    /// Joint phase updates only the fusion gate.
    pub freeze_streams: bool,
    pub batch_size: usize,
    /// Density blur when the manifest and command line give none.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            steps: 500,
            pretrain_steps: 0,
            pretrain_lr: None,
            freeze_streams: false,
            batch_size: 2,
            sigma: 8.0,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "in_channels",
    "widths",
    "ml_channels",
    "gate_channels",
    "alpha",
    "beta",
    "epsilon",
    "lr",
    "decay_interval",
    "decay_factor",
    "beta1",
    "beta2",
    "adam_eps",
    "steps",
    "pretrain_steps",
    "pretrain_lr",
    "freeze_streams",
    "batch_size",
    "sigma",
    "seed",
];

impl TrainConfig {
    /// Defaults overridden by the keys present in `kv`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(KEYS)?;
        let mut c = Self::default();
        c.model = model_config_from_kv(kv, c.model)?;
        macro_rules! set {
            ($($key:literal => $field:expr),* $(,)?) => {
                $(if let Some(v) = kv.get($key)? { $field = v; })*
            };
        }
        set! {
            "alpha" => c.loss.alpha,
            "beta" => c.loss.beta,
            "epsilon" => c.loss.epsilon,
            "lr" => c.adam.lr,
            "decay_interval" => c.adam.decay_interval,
            "decay_factor" => c.adam.decay_factor,
            "beta1" => c.adam.beta1,
            "beta2" => c.adam.beta2,
            "adam_eps" => c.adam.eps,
            "steps" => c.steps,
            "pretrain_steps" => c.pretrain_steps,
            "freeze_streams" => c.freeze_streams,
            "batch_size" => c.batch_size,
            "sigma" => c.sigma,
            "seed" => c.seed,
        }
        if let Some(v) = kv.get("pretrain_lr")? {
            c.pretrain_lr = Some(v);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.adam.validate()?;
        if let Some(lr) = self.pretrain_lr {
            AdamConfig { lr, ..self.adam }.validate()?;
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub kl: f64,
    pub nss: f64,
    pub total: f64,
}

/// Stacked inputs and targets for one step.
#[derive(Clone, Debug)]
pub struct Batch {
    pub frames: Tensor<f32>,
    pub flows: Tensor<f32>,
    pub fixations: Tensor<f32>,
    pub density: Tensor<f32>,
}

impl Batch {
    pub fn new(samples: &[&TrainSample]) -> Result<Self> {
        let mut frames = Vec::with_capacity(samples.len());
        let mut flows = Vec::with_capacity(samples.len());
        let mut fix = Vec::with_capacity(samples.len());
        let mut dens = Vec::with_capacity(samples.len());
        for s in samples {
            let (h, w) = (s.height(), s.width());
            frames.push(s.frame.clone());
            flows.push(s.flow.clone());
            fix.push(Tensor::new(
                vec![1, h, w],
                s.fixations.data().iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
            )?);
            dens.push(Tensor::new(vec![1, h, w], s.density.data().iter().map(|&v| v as f32).collect())?);
        }
        Ok(Self {
            frames: Tensor::stack(&frames)?,
            flows: Tensor::stack(&flows)?,
            fixations: Tensor::stack(&fix)?,
            density: Tensor::stack(&dens)?,
        })
    }
}

/// Output the loss is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Fused,
    Appearance,
    Temporal,
    /// Fused output with both streams held fixed.
    Fusion,
}

/// Model, parameters and optimizer state.
pub struct Trainer {
    model: TwoStreamModel,
    params: ParamSet,
    adam: Adam,
    loss: LossConfig,
}

impl Trainer {
    /// Fresh parameters from `seed`.
    pub fn new(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let model = TwoStreamModel::new(cfg.model)?;
        let params = model.init_params(seed);
        Self::with_params(model, params, cfg)
    }

    pub fn with_params(model: TwoStreamModel, params: ParamSet, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        params.check_against(&model.param_specs())?;
        let adam = Adam::new(cfg.adam, &params)?;
        Ok(Self {
            model,
            params,
            adam,
            loss: cfg.loss,
        })
    }

    pub fn model(&self) -> &TwoStreamModel {
        &self.model
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    /// Loss terms and gradients of the fused output at the current parameters.
    pub fn evaluate(&self, batch: &Batch) -> Result<(LossRecord, ParamSet)> {
        self.evaluate_on(batch, Objective::Fused)
    }

    /// Loss terms and gradients of the chosen output. Parameters the output
    /// does not depend on get zero gradients.
    pub fn evaluate_on(&self, batch: &Batch, objective: Objective) -> Result<(LossRecord, ParamSet)> {
        let mut g = Graph::<f32>::new();
        let p = match objective {
            Objective::Fusion => Bound::bind_where(&mut g, &self.params, |n| n.starts_with(FUSION)),
            _ => Bound::bind(&mut g, &self.params),
        };
        let frames = g.constant(batch.frames.clone());
        let flows = g.constant(batch.flows.clone());
        let out = self.model.forward(&mut g, &p, frames, flows)?;
        let pred = match objective {
            Objective::Fused | Objective::Fusion => out.fused,
            Objective::Appearance => out.appearance,
            Objective::Temporal => out.temporal,
        };
        let l = combined_on_graph(&mut g, pred, &batch.fixations, &batch.density, &self.loss)?;
        g.backward(l.total)?;
        let value = |v| g.value(v).data()[0] as f64;
        let rec = LossRecord {
            step: self.adam.steps_taken(),
            lr: self.adam.current_lr(),
            kl: value(l.kl),
            nss: value(l.nss),
            total: value(l.total),
        };
        if !rec.total.is_finite() {
            return Err(Error::Graph(format!("non-finite loss at step {}", rec.step)));
        }
        Ok((rec, p.grads(&g)))
    }

    /// One optimizer update. The record holds the loss before the update.
    pub fn step(&mut self, batch: &Batch) -> Result<LossRecord> {
        self.step_on(batch, Objective::Fused)
    }

    pub fn step_on(&mut self, batch: &Batch, objective: Objective) -> Result<LossRecord> {
        let (rec, grads) = self.evaluate_on(batch, objective)?;
        self.adam.step(&mut self.params, &grads)?;
        Ok(rec)
    }
}

/// Samples for step `step`: `batch_size` consecutive samples starting at
/// `step * batch_size`, wrapping around the sequence.
pub fn batch_indices(step: u64, batch_size: usize, len: usize) -> Vec<usize> {
    let start = (step as u128 * batch_size as u128 % len as u128) as usize;
    (0..batch_size).map(|i| (start + i) % len).collect()
}

/// Trained parameters and the per-step loss log.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub log: Vec<LossRecord>,
}

fn batch_at(samples: &[TrainSample], step: u64, batch_size: usize) -> Result<Batch> {
    let picked: Vec<&TrainSample> = batch_indices(step, batch_size, samples.len())
        .into_iter()
        .map(|i| &samples[i])
        .collect();
    Batch::new(&picked)
}

/// Runs `cfg.pretrain_steps` single-stream updates per stream, then
/// `cfg.steps` updates on the fused output (of the gate alone when
/// `cfg.freeze_streams`), from parameters initialized with `seed`.
pub fn train(samples: &[TrainSample], cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let mut trainer = Trainer::new(cfg, seed)?;
    if cfg.pretrain_steps > 0 {
        let pre = TrainConfig {
            adam: AdamConfig {
                lr: cfg.pretrain_lr.unwrap_or(cfg.adam.lr),
                ..cfg.adam
            },
            ..*cfg
        };
        for objective in [Objective::Appearance, Objective::Temporal] {
            trainer = Trainer::with_params(trainer.model, trainer.params, &pre)?;
            for step in 0..cfg.pretrain_steps {
                let rec = trainer.step_on(&batch_at(samples, step, cfg.batch_size)?, objective)?;
                if step % 50 == 0 || step + 1 == cfg.pretrain_steps {
                    log::info!("{objective:?} pretraining step {step} total {:.5}", rec.total);
                }
            }
        }
        trainer = Trainer::with_params(trainer.model, trainer.params, cfg)?;
    }
    let joint = if cfg.freeze_streams { Objective::Fusion } else { Objective::Fused };
    let mut log = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let rec = trainer.step_on(&batch_at(samples, step, cfg.batch_size)?, joint)?;
        if step % 50 == 0 || step + 1 == cfg.steps {
            log::info!("step {step} lr {:e} kl {:.5} nss {:.5} total {:.5}", rec.lr, rec.kl, rec.nss, rec.total);
        }
        log.push(rec);
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        log,
    })
}

/// Batch-mean combined loss of the fused output as a function of every
/// model parameter, in [`ParamSet`] order.
pub struct ModelObjective<'a> {
    pub model: &'a TwoStreamModel,
    pub names: Vec<String>,
    pub batch: &'a Batch,
    pub loss: LossConfig,
}

impl Differentiable for ModelObjective<'_> {
    fn build<T: Scalar>(&self, g: &mut Graph<T>, params: &[Var]) -> Result<Var> {
        let p = Bound::from_vars(self.names.iter().map(String::as_str), params);
        let frames = g.constant(self.batch.frames.cast());
        let flows = g.constant(self.batch.flows.cast());
        let out = self.model.forward(g, &p, frames, flows)?;
        let l = combined_on_graph(g, out.fused, &self.batch.fixations.cast(), &self.batch.density.cast(), &self.loss)?;
        Ok(l.total)
    }
}

/// Finite-difference check of every parameter gradient of the fused loss.
pub fn check_model_gradients(
    model: &TwoStreamModel,
    params: &ParamSet,
    batch: &Batch,
    loss: &LossConfig,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    params.check_against(&model.param_specs())?;
    let named = params.to_named_vec();
    let objective = ModelObjective {
        model,
        names: named.iter().map(|(n, _)| n.clone()).collect(),
        batch,
        loss: *loss,
    };
    grad_check(&objective, &named, cfg)
}

/// Loss log as CSV with header `step,lr,kl,nss,total`.
pub fn write_loss_log<W: Write>(mut out: W, log: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "step,lr,kl,nss,total")?;
    for r in log {
        writeln!(out, "{},{},{},{},{}", r.step, r.lr, r.kl, r.nss, r.total)?;
    }
    Ok(())
}

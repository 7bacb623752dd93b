//! Adam with bias correction and a step-decay learning-rate schedule.

use crate::blocks::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    /// Base learning rate.
    pub lr: f64,
    /// The rate is multiplied by `decay_factor` every `decay_interval` steps.
    pub decay_interval: u64,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            decay_interval: 3000,
            decay_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// `lr * decay_factor ^ floor(step / decay_interval)` for the 0-based step.
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr * self.decay_factor.powi((step / self.decay_interval) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.decay_interval > 0
            && self.decay_factor > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

/// Per-parameter moments and the step counter.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: ParamSet,
    second: ParamSet,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &ParamSet {
        &self.first
    }

    pub fn second_moments(&self) -> &ParamSet {
        &self.second
    }

    /// Learning rate the next call to [`Adam::step`] will use.
    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }

    /// Applies one update and returns the learning rate used. Every
    /// parameter must have a gradient of the same shape.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<f64> {
        for (name, p) in params.iter() {
            match grads.get(name) {
                None => return Err(Error::contract("adam_step", format!("no gradient for {name}"))),
                Some(g) if g.shape() != p.shape() => {
                    return Err(Error::shape(
                        "adam_step",
                        format!("gradient for {name} has shape {:?}, parameter {:?}", g.shape(), p.shape()),
                    ))
                }
                Some(_) => {}
            }
            if !self.first.contains(name) {
                return Err(Error::contract("adam_step", format!("parameter {name} has no optimizer state")));
            }
        }

        let c = self.config;
        let lr = c.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let correct1 = 1.0 - c.beta1.powi(t);
        let correct2 = 1.0 - c.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked").data();
            let m = self.first.get_mut(name).expect("checked").data_mut();
            let v = self.second.get_mut(name).expect("checked").data_mut();
            let v = &mut v[..];
            for (i, pv) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i] as f64;
                let mi = c.beta1 * m[i] as f64 + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v[i] as f64 + (1.0 - c.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / correct1) / ((vi / correct2).sqrt() + c.eps);
                *pv = (*pv as f64 - update) as f32;
            }
        }
        self.step += 1;
        Ok(lr)
    }
}

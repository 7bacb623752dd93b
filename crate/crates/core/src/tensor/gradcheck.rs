//! Central finite-difference gradient checking.
//!
//! The analytic gradient comes from the 32-bit tape. The oracle replays the
//! same graph builder in 64-bit, where a small step does not drown in
//! rounding noise.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// A deterministic scalar objective over a list of parameter tensors.
pub trait Differentiable {
    /// Builds the objective. `params[i]` is the leaf for the i-th parameter
    /// handed to [`grad_check`].
    fn build<T: Scalar>(&self, g: &mut Graph<T>, params: &[Var]) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step, applied in 64-bit.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator stabilizer of the relative error.
    pub epsilon: f64,
    /// Coordinates checked per parameter tensor; `None` checks all of them.
    /// The largest-magnitude analytic entry is always included.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-7,
            tolerance: 1e-3,
            epsilon: 1e-8,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    /// `|g_analytic - g_fd|_inf / (|g_fd|_inf + epsilon)` over the checked coordinates.
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub fd_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error <= self.tolerance)
    }

    /// Worst error per group, where the group is the first `depth`
    /// dot-separated segments of the parameter name. Groups keep first-seen order.
    pub fn by_group(&self, depth: usize) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for e in &self.entries {
            let key = e.name.split('.').take(depth).collect::<Vec<_>>().join(".");
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => *v = v.max(e.max_rel_error),
                None => out.push((key, e.max_rel_error)),
            }
        }
        out
    }
}

fn evaluate<F: Differentiable>(f: &F, params: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f.build(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::contract("grad_check", format!("objective has shape {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Analytic gradients of `f` on the 32-bit tape, in parameter order.
pub fn analytic_gradients<F: Differentiable>(f: &F, params: &[Tensor<f32>]) -> Result<(f32, Vec<Tensor<f32>>)> {
    let mut g = Graph::<f32>::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f.build(&mut g, &vars)?;
    g.backward(out)?;
    let value = g.value(out).data()[0];
    let grads = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, grads))
}

pub fn grad_check<F: Differentiable>(
    f: &F,
    params: &[(String, Tensor<f32>)],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let values: Vec<Tensor<f32>> = params.iter().map(|(_, t)| t.clone()).collect();
    let (_, analytic) = analytic_gradients(f, &values)?;
    let mut shadow: Vec<Tensor<f64>> = values.iter().map(|t| t.cast()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let n = tensor.numel();
        let grad = analytic[pi].data();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => {
                let argmax = (0..n)
                    .max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs()))
                    .unwrap_or(0);
                let mut c = vec![argmax];
                c.extend(sample(&mut rng, n, k).into_iter().filter(|&i| i != argmax).take(k.saturating_sub(1)));
                c
            }
            _ => (0..n).collect(),
        };

        let mut diff_max = 0.0f64;
        let mut fd_max = 0.0f64;
        for &i in &coords {
            let orig = shadow[pi].data()[i];
            shadow[pi].data_mut()[i] = orig + cfg.step;
            let plus = evaluate(f, &shadow)?;
            shadow[pi].data_mut()[i] = orig - cfg.step;
            let minus = evaluate(f, &shadow)?;
            shadow[pi].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * cfg.step);
            diff_max = diff_max.max((grad[i] as f64 - fd).abs());
            fd_max = fd_max.max(fd.abs());
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_error: diff_max / (fd_max + cfg.epsilon),
            coords_checked: coords.len(),
            fd_norm: fd_max,
        });
    }
    Ok(GradCheckReport {
        entries,
        tolerance: cfg.tolerance,
    })
}

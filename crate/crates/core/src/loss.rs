//! KL and NSS training objectives and their weighted combination.
//!
//! The slice functions are shared by the autodiff ops in
//! [`crate::tensor::Graph`] and by the evaluation metrics.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Weights of the combined objective `alpha * KL + beta * NSS-loss`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Stabilizer for logarithms and divisions.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            epsilon: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config("alpha and beta cannot both be zero".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Per-term values of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub kl: f64,
    pub nss: f64,
    pub total: f64,
}

// The reductions below run in f64 whatever the storage type: near-constant
// maps have a spread far below f32 resolution, and the centered NSS gradient
// cancels catastrophically in single precision.

fn widen<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn narrow<T: Scalar>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::of).collect()
}

fn normalizer(pred: &[f64]) -> Result<f64> {
    if pred.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::contract("kl_divergence", "prediction has negative or non-finite values"));
    }
    let sum: f64 = pred.iter().sum();
    if sum <= 0.0 {
        return Err(Error::contract("kl_divergence", "prediction sums to zero"));
    }
    Ok(sum)
}

/// `sum_i S(i) * ln((S(i) + eps) / (Q(i) + eps))` with `Q = pred / sum(pred)`.
pub fn kl_divergence<T: Scalar>(pred: &[T], density: &[T], eps: T) -> Result<T> {
    if pred.len() != density.len() {
        return Err(Error::shape(
            "kl_divergence",
            format!("{} prediction values vs {} density values", pred.len(), density.len()),
        ));
    }
    let (pred, density, eps) = (widen(pred), widen(density), eps.as_f64());
    let sum = normalizer(&pred)?;
    Ok(T::of(pred.iter().zip(&density).fold(0.0, |acc, (&p, &s)| {
        if s == 0.0 {
            acc
        } else {
            acc + s * ((s + eps) / (p / sum + eps)).ln()
        }
    })))
}

/// Gradient of [`kl_divergence`] with respect to the unnormalized prediction.
/// Callers must have validated the inputs through the forward function.
pub(crate) fn kl_divergence_grad<T: Scalar>(pred: &[T], density: &[T], eps: T) -> Vec<T> {
    let (pred, density, eps) = (widen(pred), widen(density), eps.as_f64());
    let sum: f64 = pred.iter().sum();
    let dq: Vec<f64> = pred.iter().zip(&density).map(|(&p, &s)| -s / (p / sum + eps)).collect();
    let weighted = dq.iter().zip(&pred).fold(0.0, |a, (&g, &p)| a + g * (p / sum));
    narrow(dq.into_iter().map(|g| (g - weighted) / sum).collect())
}

struct Moments {
    mean: f64,
    std: f64,
}

/// Mean and population standard deviation.
fn moments(values: &[f64]) -> Moments {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Moments { mean, std: var.sqrt() }
}

fn fixation_count(fixation: &[f64]) -> Result<f64> {
    let n: f64 = fixation.iter().sum();
    if n <= 0.0 {
        return Err(Error::contract("nss", "fixation map contains no fixations"));
    }
    Ok(n)
}

/// Negated mean of the standardized prediction at fixated pixels.
pub fn nss_loss<T: Scalar>(pred: &[T], fixation: &[T], eps: T) -> Result<T> {
    if pred.len() != fixation.len() {
        return Err(Error::shape(
            "nss",
            format!("{} prediction values vs {} fixation values", pred.len(), fixation.len()),
        ));
    }
    let (pred, fixation, eps) = (widen(pred), widen(fixation), eps.as_f64());
    let n = fixation_count(&fixation)?;
    let m = moments(&pred);
    let denom = m.std + eps;
    let acc = pred
        .iter()
        .zip(&fixation)
        .fold(0.0, |a, (&p, &f)| a + (p - m.mean) / denom * f);
    Ok(T::of(-acc / n))
}

pub(crate) fn nss_loss_grad<T: Scalar>(pred: &[T], fixation: &[T], eps: T) -> Vec<T> {
    let (pred, fixation, eps) = (widen(pred), widen(fixation), eps.as_f64());
    let count: f64 = fixation.iter().sum();
    let len = pred.len() as f64;
    let m = moments(&pred);
    let denom = m.std + eps;
    // d loss / d standardized value
    let g: Vec<f64> = fixation.iter().map(|&f| -f / count).collect();
    let g_mean = g.iter().sum::<f64>() / len;
    let through_std = if m.std > 0.0 {
        let cross = g.iter().zip(&pred).fold(0.0, |a, (&gv, &p)| a + gv * (p - m.mean));
        cross / (len * m.std * denom * denom)
    } else {
        0.0
    };
    narrow(
        g.iter()
            .zip(&pred)
            .map(|(&gv, &p)| (gv - g_mean) / denom - through_std * (p - m.mean))
            .collect(),
    )
}

/// Evaluates the combined objective on one map.
pub fn combined<T: Scalar>(pred: &[T], fixation: &[T], density: &[T], cfg: &LossConfig) -> Result<LossTerms> {
    cfg.validate()?;
    let eps = T::of(cfg.epsilon);
    let kl = kl_divergence(pred, density, eps)?.as_f64();
    let nss = nss_loss(pred, fixation, eps)?.as_f64();
    Ok(LossTerms {
        kl,
        nss,
        total: cfg.alpha * kl + cfg.beta * nss,
    })
}

/// Nodes of the combined objective on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub kl: Var,
    pub nss: Var,
    pub total: Var,
}

/// Adds the batch-mean combined objective for a `[B,1,H,W]` prediction.
pub fn combined_on_graph<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    fixation: &Tensor<T>,
    density: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<LossVars> {
    cfg.validate()?;
    let eps = T::of(cfg.epsilon);
    let kl = g.kl_loss(pred, density.clone(), eps)?;
    let nss = g.nss_loss(pred, fixation.clone(), eps)?;
    let wkl = g.scalar_mul(kl, T::of(cfg.alpha));
    let wnss = g.scalar_mul(nss, T::of(cfg.beta));
    let total = g.add(wkl, wnss)?;
    Ok(LossVars { kl, nss, total })
}

//! Saliency evaluation metrics and fixation density maps.
//!
//! Metric functions take flat row-major slices so they apply to maps of any
//! layout; [`evaluate_sequence`] works on the typed maps.

mod auc;
mod density;
mod evaluate;

pub use auc::auc_judd;
pub use density::{fixations_to_density, gaussian_kernel};
pub use evaluate::{evaluate_sequence, FrameFlag, FrameMetrics, MetricMeans, MetricReport};

use crate::error::{Error, Result};
use crate::loss;

/// Stabilizer shared by the distribution metrics.
pub const METRIC_EPSILON: f64 = 1e-8;

/// Row-major H x W map of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape(
                "saliency_map",
                format!("{} values for a {height}x{width} map", data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Gaussian-blurred fixations, normalized to sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DensityMap {
    /// Wraps non-negative values summing to 1 within 1e-5.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape(
                "density_map",
                format!("{} values for a {height}x{width} map", data.len()),
            ));
        }
        let sum: f64 = data.iter().sum();
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || (sum - 1.0).abs() > 1e-5 {
            return Err(Error::contract("density_map", format!("values must be non-negative and sum to 1 (sum {sum})")));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_saliency(&self) -> SaliencyMap {
        SaliencyMap {
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }
}

/// Binary map of fixated pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixationMap {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl FixationMap {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape(
                "fixation_map",
                format!("{} values for a {height}x{width} map", data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    /// Map with the given `(x, y)` pixels set. Duplicates collapse.
    pub fn from_points(height: usize, width: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut data = vec![false; height * width];
        for &(x, y) in points {
            if x >= width || y >= height {
                return Err(Error::shape(
                    "fixation_map",
                    format!("fixation ({x},{y}) outside {width}x{height}"),
                ));
            }
            data[y * width + x] = true;
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&f| f).count()
    }

    /// 0/1 values as reals.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect()
    }
}

/// Correlation coefficient with its degeneracy flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcScore {
    pub value: f64,
    /// Set when either map is constant; `value` is then 0.
    pub degenerate: bool,
}

fn check_pair(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(op, format!("map sizes {} and {} differ or are empty", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::contract(op, "maps contain non-finite values"));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Pearson correlation of the two maps.
pub fn cc(pred: &[f64], density: &[f64]) -> Result<CcScore> {
    check_pair("cc", pred, density)?;
    if is_constant(pred) || is_constant(density) {
        return Ok(CcScore {
            value: 0.0,
            degenerate: true,
        });
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let ms = density.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vs) = (0.0, 0.0, 0.0);
    for (&p, &s) in pred.iter().zip(density) {
        cov += (p - mp) * (s - ms);
        vp += (p - mp) * (p - mp);
        vs += (s - ms) * (s - ms);
    }
    if vp <= 0.0 || vs <= 0.0 {
        return Ok(CcScore {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(CcScore {
        value: (cov / (vp.sqrt() * vs.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Mean standardized prediction at fixated pixels.
pub fn nss(pred: &[f64], fixations: &[bool]) -> Result<f64> {
    let f: Vec<f64> = fixations.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    check_pair("nss", pred, &f)?;
    Ok(-loss::nss_loss(pred, &f, METRIC_EPSILON)?)
}

fn normalized(op: &'static str, values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|&v| v < 0.0) {
        return Err(Error::contract(op, "map has negative values"));
    }
    let sum: f64 = values.iter().sum();
    if sum <= 0.0 {
        return Err(Error::contract(op, "map sums to zero"));
    }
    Ok(values.iter().map(|v| v / sum).collect())
}

/// Histogram intersection of the two maps after normalizing each to sum 1.
pub fn sim(pred: &[f64], density: &[f64]) -> Result<f64> {
    check_pair("sim", pred, density)?;
    let p = normalized("sim", pred)?;
    let s = normalized("sim", density)?;
    Ok(p.iter().zip(&s).map(|(a, b)| a.min(*b)).sum::<f64>().min(1.0))
}

/// KL divergence of the density from the sum-normalized prediction.
pub fn kldiv(pred: &[f64], density: &[f64], eps: f64) -> Result<f64> {
    check_pair("kldiv", pred, density)?;
    loss::kl_divergence(pred, density, eps)
}

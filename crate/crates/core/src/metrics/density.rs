use super::{DensityMap, FixationMap};
use crate::error::{Error, Result};

/// Normalized Gaussian weights for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma_px: f64) -> Result<Vec<f64>> {
    if !(sigma_px > 0.0) || !sigma_px.is_finite() {
        return Err(Error::contract("gaussian_kernel", format!("sigma must be positive, got {sigma_px}")));
    }
    let r = (3.0 * sigma_px).ceil() as isize;
    let w: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / sum).collect())
}

/// Half-sample symmetric reflection: `... c b a | a b c ... | c b a ...`,
/// repeated periodically for offsets longer than the axis.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn blur_axis(src: &[f64], h: usize, w: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wk) in kernel.iter().enumerate() {
                let off = k as isize - r;
                let v = if horizontal {
                    src[y * w + reflect(x as isize + off, w)]
                } else {
                    src[reflect(y as isize + off, h) * w + x]
                };
                acc += wk * v;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Blurs the fixation map with a truncated Gaussian (radius `ceil(3 sigma)`,
/// reflected borders) and normalizes the result to sum to one.
pub fn fixations_to_density(fixations: &FixationMap, sigma_px: f64) -> Result<DensityMap> {
    if fixations.count() == 0 {
        return Err(Error::contract("fixations_to_density", "fixation map is empty"));
    }
    let kernel = gaussian_kernel(sigma_px)?;
    let (h, w) = (fixations.height(), fixations.width());
    let blurred = blur_axis(
        &blur_axis(&fixations.to_f64(), h, w, &kernel, true),
        h,
        w,
        &kernel,
        false,
    );
    let sum: f64 = blurred.iter().sum();
    DensityMap::new(h, w, blurred.into_iter().map(|v| v / sum).collect())
}

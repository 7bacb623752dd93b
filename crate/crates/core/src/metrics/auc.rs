use crate::error::{Error, Result};

/// AUC-Judd. Thresholds are the saliency values at fixated pixels, visited in
/// descending order. At threshold `t` the true-positive rate is the fraction
/// of fixations with `P >= t` and the false-positive rate is the fraction of
/// non-fixated pixels with `P >= t`. The ROC polyline runs from (0,0) through
/// every threshold point to (1,1) and is integrated with the trapezoid rule.
pub fn auc_judd(pred: &[f64], fixations: &[bool]) -> Result<f64> {
    if pred.len() != fixations.len() || pred.is_empty() {
        return Err(Error::shape(
            "auc_judd",
            format!("{} saliency values vs {} fixation cells", pred.len(), fixations.len()),
        ));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("auc_judd", "saliency map contains non-finite values"));
    }
    let mut fixated: Vec<f64> = pred
        .iter()
        .zip(fixations)
        .filter_map(|(&p, &f)| f.then_some(p))
        .collect();
    let n_fix = fixated.len();
    let n_pix = pred.len();
    if n_fix == 0 {
        return Err(Error::contract("auc_judd", "no fixated pixels"));
    }
    if n_fix == n_pix {
        return Err(Error::contract("auc_judd", "every pixel is fixated"));
    }
    let mut all = pred.to_vec();
    fixated.sort_by(|a, b| b.total_cmp(a));
    all.sort_by(|a, b| b.total_cmp(a));

    // Twice the area in units of 1/(neg * n_fix), kept as an integer so the
    // result is a single correctly rounded division.
    let neg = (n_pix - n_fix) as u128;
    let mut twice_area: u128 = 0;
    let (mut prev_fp, mut prev_tp) = (0u128, 0u128);
    let (mut above_all, mut above_fix) = (0usize, 0usize);
    for &t in &fixated {
        while above_all < n_pix && all[above_all] >= t {
            above_all += 1;
        }
        while above_fix < n_fix && fixated[above_fix] >= t {
            above_fix += 1;
        }
        let tp = above_fix as u128;
        let fp = (above_all - above_fix) as u128;
        twice_area += (fp - prev_fp) * (prev_tp + tp);
        prev_fp = fp;
        prev_tp = tp;
    }
    twice_area += (neg - prev_fp) * (prev_tp + n_fix as u128);
    Ok(twice_area as f64 / (2 * neg * n_fix as u128) as f64)
}

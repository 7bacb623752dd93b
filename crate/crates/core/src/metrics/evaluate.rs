use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use super::{auc_judd, cc, fixations_to_density, kldiv, nss, sim, FixationMap, SaliencyMap, METRIC_EPSILON};
use crate::error::{Error, Result};

/// Reasons a frame is flagged in a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameFlag {
    /// Ground truth has no fixations; frame skipped.
    NoFixations,
    /// Every pixel is fixated; frame skipped.
    AllFixated,
    /// Prediction has no mass; frame skipped.
    ZeroPrediction,
    /// Prediction or density is constant; CC recorded as 0.
    ConstantMap,
}

impl FrameFlag {
    pub fn skips_frame(self) -> bool {
        !matches!(self, FrameFlag::ConstantMap)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FrameFlag::NoFixations => "no_fixations",
            FrameFlag::AllFixated => "all_fixated",
            FrameFlag::ZeroPrediction => "zero_prediction",
            FrameFlag::ConstantMap => "constant_map",
        }
    }
}

impl fmt::Display for FrameFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The five scores for one frame or their sequence means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricMeans {
    pub auc_judd: f64,
    pub cc: f64,
    pub nss: f64,
    pub sim: f64,
    pub kldiv: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub index: usize,
    /// `None` when the frame was skipped.
    pub scores: Option<MetricMeans>,
    pub flags: Vec<FrameFlag>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub sigma_px: f64,
    pub frames: Vec<FrameMetrics>,
    /// Unweighted means over scored frames; `None` if every frame was skipped.
    pub means: Option<MetricMeans>,
}

fn score_frame(index: usize, pred: &SaliencyMap, fix: &FixationMap, sigma_px: f64) -> Result<FrameMetrics> {
    let skipped = |flag| FrameMetrics {
        index,
        scores: None,
        flags: vec![flag],
    };
    let n = fix.count();
    if n == 0 {
        return Ok(skipped(FrameFlag::NoFixations));
    }
    if n == fix.data().len() {
        return Ok(skipped(FrameFlag::AllFixated));
    }
    let p = pred.data();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::contract(
            "evaluate_sequence",
            format!("frame {index}: prediction has negative or non-finite values"),
        ));
    }
    if p.iter().sum::<f64>() <= 0.0 {
        return Ok(skipped(FrameFlag::ZeroPrediction));
    }
    let density = fixations_to_density(fix, sigma_px)?;
    let s = density.data();
    let c = cc(p, s)?;
    let scores = MetricMeans {
        auc_judd: auc_judd(p, fix.data())?,
        cc: c.value,
        nss: nss(p, fix.data())?,
        sim: sim(p, s)?,
        kldiv: kldiv(p, s, METRIC_EPSILON)?,
    };
    Ok(FrameMetrics {
        index,
        scores: Some(scores),
        flags: if c.degenerate { vec![FrameFlag::ConstantMap] } else { Vec::new() },
    })
}

/// Scores each prediction against its fixation map. Densities use
/// `sigma_px`. Frames are scored in parallel and reported in input order.
pub fn evaluate_sequence(predictions: &[SaliencyMap], fixations: &[FixationMap], sigma_px: f64) -> Result<MetricReport> {
    if predictions.len() != fixations.len() {
        return Err(Error::shape(
            "evaluate_sequence",
            format!("{} predictions for {} ground-truth frames", predictions.len(), fixations.len()),
        ));
    }
    if !(sigma_px > 0.0) || !sigma_px.is_finite() {
        return Err(Error::contract("evaluate_sequence", format!("sigma must be positive, got {sigma_px}")));
    }
    for (i, (p, f)) in predictions.iter().zip(fixations).enumerate() {
        if (p.height(), p.width()) != (f.height(), f.width()) {
            return Err(Error::shape(
                "evaluate_sequence",
                format!(
                    "frame {i}: prediction {}x{} vs ground truth {}x{}",
                    p.width(),
                    p.height(),
                    f.width(),
                    f.height()
                ),
            ));
        }
    }
    let frames = predictions
        .par_iter()
        .zip(fixations.par_iter())
        .enumerate()
        .map(|(i, (p, f))| score_frame(i, p, f, sigma_px))
        .collect::<Result<Vec<_>>>()?;

    let scored: Vec<&MetricMeans> = frames.iter().filter_map(|f| f.scores.as_ref()).collect();
    let means = (!scored.is_empty()).then(|| {
        let n = scored.len() as f64;
        let mean = |get: fn(&MetricMeans) -> f64| scored.iter().map(|s| get(s)).sum::<f64>() / n;
        MetricMeans {
            auc_judd: mean(|s| s.auc_judd),
            cc: mean(|s| s.cc),
            nss: mean(|s| s.nss),
            sim: mean(|s| s.sim),
            kldiv: mean(|s| s.kldiv),
        }
    });
    Ok(MetricReport {
        sigma_px,
        frames,
        means,
    })
}

impl MetricReport {
    pub fn scored_count(&self) -> usize {
        self.frames.iter().filter(|f| f.scores.is_some()).count()
    }

    pub fn skipped_count(&self) -> usize {
        self.frames.len() - self.scored_count()
    }

    /// Frames carrying any flag.
    pub fn degenerate_count(&self) -> usize {
        self.frames.iter().filter(|f| !f.flags.is_empty()).count()
    }

    /// Per-frame CSV preceded by a `#` header line recording sigma.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# sigma_px={}", self.sigma_px)?;
        writeln!(out, "frame_index,auc_judd,cc,nss,sim,kldiv,degenerate_flags")?;
        for f in &self.frames {
            let flags: Vec<&str> = f.flags.iter().map(|fl| fl.as_str()).collect();
            match &f.scores {
                Some(s) => writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    f.index,
                    s.auc_judd,
                    s.cc,
                    s.nss,
                    s.sim,
                    s.kldiv,
                    flags.join("|")
                )?,
                None => writeln!(out, "{},,,,,,{}", f.index, flags.join("|"))?,
            }
        }
        Ok(())
    }

    /// One human-readable line with the means.
    pub fn summary_line(&self) -> String {
        match &self.means {
            Some(m) => format!(
                "mean over {} frames (sigma {} px, {} skipped): AUC-J {:.4} CC {:.4} NSS {:.4} SIM {:.4} KLDiv {:.4}",
                self.scored_count(),
                self.sigma_px,
                self.skipped_count(),
                m.auc_judd,
                m.cc,
                m.nss,
                m.sim,
                m.kldiv
            ),
            None => format!("no frames scored ({} skipped)", self.skipped_count()),
        }
    }

    /// Machine-readable `key=value` summary.
    pub fn summary_kv(&self) -> String {
        let mut s = format!(
            "sigma_px={}\nframes={}\nscored={}\nskipped={}\ndegenerate={}\n",
            self.sigma_px,
            self.frames.len(),
            self.scored_count(),
            self.skipped_count(),
            self.degenerate_count()
        );
        if let Some(m) = &self.means {
            s.push_str(&format!(
                "auc_judd={}\ncc={}\nnss={}\nsim={}\nkldiv={}\n",
                m.auc_judd, m.cc, m.nss, m.sim, m.kldiv
            ));
        }
        s
    }
}

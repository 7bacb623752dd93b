use std::path::Path;

use rayon::prelude::*;

use super::images::{image_size, read_rgb, resize_bilinear};
use super::manifest::SequenceManifest;
use crate::error::{Error, Result};
use crate::metrics::{fixations_to_density, DensityMap, FixationMap};
use crate::tensor::Tensor;

/// One training example at the target resolution.
#[derive(Clone, Debug)]
pub struct TrainSample {
    /// `[3,H,W]` RGB in [0,1].
    pub frame: Tensor<f32>,
    /// `[3,H,W]` rendered flow in [0,1].
    pub flow: Tensor<f32>,
    pub fixations: FixationMap,
    pub density: DensityMap,
}

impl TrainSample {
    /// Checks shapes and computes the density map.
    pub fn new(frame: Tensor<f32>, flow: Tensor<f32>, fixations: FixationMap, sigma_px: f64) -> Result<Self> {
        let (h, w) = (fixations.height(), fixations.width());
        for (what, t) in [("frame", &frame), ("flow", &flow)] {
            if t.shape() != [3, h, w] {
                return Err(Error::shape(
                    "train_sample",
                    format!("{what} has shape {:?}, expected [3, {h}, {w}]", t.shape()),
                ));
            }
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::shape("train_sample", format!("{h}x{w} is not divisible by 16")));
        }
        let density = fixations_to_density(&fixations, sigma_px)?;
        Ok(Self {
            frame,
            flow,
            fixations,
            density,
        })
    }

    pub fn height(&self) -> usize {
        self.fixations.height()
    }

    pub fn width(&self) -> usize {
        self.fixations.width()
    }
}

/// Reads `(x, y)` integer pixel coordinates, one pair per row. A leading
/// non-numeric row is taken as a header; `#` starts a comment line.
pub fn read_fixation_csv(path: &Path) -> Result<Vec<(i64, i64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::format(path, None, e.to_string()))?;
    let mut points = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize);
            Error::format(path, line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize);
        if row.len() != 2 {
            return Err(Error::format(path, line, format!("expected 2 fields, found {}", row.len())));
        }
        let parsed = (row[0].parse::<i64>(), row[1].parse::<i64>());
        match parsed {
            (Ok(x), Ok(y)) => points.push((x, y)),
            _ if i == 0 && row[0].parse::<f64>().is_err() && row[1].parse::<f64>().is_err() => {}
            _ => {
                return Err(Error::format(
                    path,
                    line,
                    format!("expected integer coordinates, found {:?},{:?}", &row[0], &row[1]),
                ))
            }
        }
    }
    Ok(points)
}

/// Maps fixations from a `src_w x src_h` image onto the target grid by
/// scaling and rounding to the nearest pixel. Points that land outside are
/// clamped with a warning.
pub fn rescale_fixations(
    points: &[(i64, i64)],
    src: (usize, usize),
    dst: (usize, usize),
    origin: &Path,
) -> Result<FixationMap> {
    let (sw, sh) = src;
    let (dw, dh) = dst;
    let rx = dw as f64 / sw as f64;
    let ry = dh as f64 / sh as f64;
    let mut cells = Vec::with_capacity(points.len());
    for &(x, y) in points {
        let tx = (x as f64 * rx).round() as i64;
        let ty = (y as f64 * ry).round() as i64;
        let cx = tx.clamp(0, dw as i64 - 1);
        let cy = ty.clamp(0, dh as i64 - 1);
        if (cx, cy) != (tx, ty) {
            log::warn!(
                "{}: fixation ({x},{y}) maps to ({tx},{ty}) outside {dw}x{dh}; clamped to ({cx},{cy})",
                origin.display()
            );
        }
        cells.push((cx as usize, cy as usize));
    }
    FixationMap::from_points(dh, dw, &cells)
}

/// Fixation map for one record at the manifest resolution. The source
/// resolution is taken from the record's frame file.
pub fn load_fixation_map(manifest: &SequenceManifest, index: usize) -> Result<FixationMap> {
    let rec = &manifest.records[index];
    let frame_path = manifest.resolve(&rec.frame);
    let fix_path = manifest.resolve(&rec.fixations);
    let src = image_size(&frame_path)?;
    let points = read_fixation_csv(&fix_path)?;
    rescale_fixations(&points, src, (manifest.width, manifest.height), &fix_path)
}

/// Frame and flow image of one record at the manifest resolution, plus the
/// frame's source size `(w, h)`.
pub fn load_inputs(manifest: &SequenceManifest, index: usize) -> Result<(Tensor<f32>, Tensor<f32>, (usize, usize))> {
    let rec = manifest
        .records
        .get(index)
        .ok_or_else(|| Error::shape("load_inputs", format!("record {index} of {}", manifest.len())))?;
    let (h, w) = (manifest.height, manifest.width);
    let frame = read_rgb(&manifest.resolve(&rec.frame))?;
    let src = (frame.shape()[2], frame.shape()[1]);
    let frame = resize_bilinear(&frame, h, w)?;
    let flow = resize_bilinear(&read_rgb(&manifest.resolve(&rec.flow))?, h, w)?;
    Ok((frame, flow, src))
}

/// Loads one record. Returns `None` (with a warning) when it has no
/// fixations.
pub fn load_sample(manifest: &SequenceManifest, index: usize, sigma_px: f64) -> Result<Option<TrainSample>> {
    let (frame, flow, src) = load_inputs(manifest, index)?;
    let fix_path = manifest.resolve(&manifest.records[index].fixations);
    let points = read_fixation_csv(&fix_path)?;
    if points.is_empty() {
        log::warn!("{}: no fixations; record {index} skipped", fix_path.display());
        return Ok(None);
    }
    let fixations = rescale_fixations(&points, src, (manifest.width, manifest.height), &fix_path)?;
    TrainSample::new(frame, flow, fixations, sigma_px).map(Some)
}

/// Loads every record in parallel, keeping manifest order and dropping
/// records without fixations. Fails if nothing remains.
pub fn load_samples(manifest: &SequenceManifest, sigma_px: f64) -> Result<Vec<TrainSample>> {
    let loaded = (0..manifest.len())
        .into_par_iter()
        .map(|i| load_sample(manifest, i, sigma_px))
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<TrainSample> = loaded.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "sequence {}: no record has fixations",
            manifest.sequence
        )));
    }
    Ok(samples)
}

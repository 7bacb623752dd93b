//! Synthetic clips for tests, fixtures and sanity training.
//!
//! [`moving_blob_clip`] is a bright blob drifting over a dark background.
//! [`motion_dominant_clip`] makes saliency depend on motion alone: the moving
//! object shares the background's noise texture so a single frame does not
//! reveal it, while a visible static patch carries spurious flow of the same
//! strength. Fixations always follow the moving object.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::images::{render_flow, write_ppm};
use crate::io::manifest::{ManifestRecord, SequenceManifest};
use crate::io::TrainSample;
use crate::metrics::FixationMap;
use crate::tensor::Tensor;

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    /// Parses `x,y,w,h`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("region {s:?} is not x,y,w,h")))?;
        match v[..] {
            [x, y, w, h] if w > 0 && h > 0 => Ok(Self { x, y, w, h }),
            _ => Err(Error::Config(format!("region {s:?} is not x,y,w,h with positive size"))),
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    /// True when the regions, each grown by `gap` pixels, intersect.
    pub fn overlaps(&self, other: &Region, gap: usize) -> bool {
        self.x < other.x + other.w + gap
            && other.x < self.x + self.w + gap
            && self.y < other.y + other.h + gap
            && other.y < self.y + self.h + gap
    }

    /// Parses `x,y,w,h[;x,y,w,h...]`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(';').filter(|p| !p.trim().is_empty()).map(Self::parse).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SynthFrame {
    /// `[3,H,W]` RGB in [0,1].
    pub frame: Tensor<f32>,
    /// `[3,H,W]` rendered flow in [0,1].
    pub flow: Tensor<f32>,
    /// `(x, y)` fixation pixels.
    pub fixations: Vec<(i64, i64)>,
    /// Bounding box of the moving object.
    pub moving: Region,
}

#[derive(Clone, Debug)]
pub struct SynthClip {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<SynthFrame>,
    /// Static distractors of motion-dominant clips.
    pub static_regions: Vec<Region>,
}

#[derive(Clone)]
struct Mover {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    r: f64,
}

impl Mover {
    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize, r: f64) -> Self {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let speed = rng.gen_range(1.0..2.5);
        Self {
            cx: rng.gen_range(r..w as f64 - r),
            cy: rng.gen_range(r..h as f64 - r),
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
            r,
        }
    }

    fn advance(&mut self, w: usize, h: usize) {
        self.cx += self.vx;
        self.cy += self.vy;
        if self.cx < self.r || self.cx > w as f64 - self.r {
            self.vx = -self.vx;
            self.cx = self.cx.clamp(self.r, w as f64 - self.r);
        }
        if self.cy < self.r || self.cy > h as f64 - self.r {
            self.vy = -self.vy;
            self.cy = self.cy.clamp(self.r, h as f64 - self.r);
        }
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.r * self.r
    }

    fn bounds(&self, w: usize, h: usize) -> Region {
        let x0 = (self.cx - self.r).floor().max(0.0) as usize;
        let y0 = (self.cy - self.r).floor().max(0.0) as usize;
        let x1 = ((self.cx + self.r).ceil() as usize).min(w);
        let y1 = ((self.cy + self.r).ceil() as usize).min(h);
        Region {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    fn fixations(&self, rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> Vec<(i64, i64)> {
        (0..n)
            .map(|_| {
                let x = self.cx + self.r * 0.5 * (rng.gen::<f64>() + rng.gen::<f64>() - 1.0);
                let y = self.cy + self.r * 0.5 * (rng.gen::<f64>() + rng.gen::<f64>() - 1.0);
                (
                    (x.floor() as i64).clamp(0, w as i64 - 1),
                    (y.floor() as i64).clamp(0, h as i64 - 1),
                )
            })
            .collect()
    }
}

fn check_size(w: usize, h: usize, frames: usize) -> Result<()> {
    if w < 16 || h < 16 || frames == 0 {
        return Err(Error::Config(format!("synthetic clip needs at least 16x16 and one frame, got {w}x{h}x{frames}")));
    }
    Ok(())
}

/// Flow field with `(vx, vy)` on the pixels selected by `inside`.
fn flow_field(w: usize, h: usize, patches: &[(&dyn Fn(usize, usize) -> bool, f64, f64)]) -> Result<Tensor<f32>> {
    let mut raw = vec![0.0f32; 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            for (inside, vx, vy) in patches {
                if inside(x, y) {
                    raw[y * w + x] = *vx as f32;
                    raw[h * w + y * w + x] = *vy as f32;
                }
            }
        }
    }
    render_flow(&Tensor::new(vec![2, h, w], raw)?)
}

/// A bright blob moving over a dark, lightly noisy background.
pub fn moving_blob_clip(width: usize, height: usize, frames: usize, seed: u64) -> Result<SynthClip> {
    check_size(width, height, frames)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = width.min(height) as f64 / 8.0;
    let mut mover = Mover::random(&mut rng, width, height, r);
    let n = width * height;
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut img = vec![0.0f32; 3 * n];
        for y in 0..height {
            for x in 0..width {
                let base = 0.1 + 0.05 * rng.gen::<f64>();
                let dx = x as f64 + 0.5 - mover.cx;
                let dy = y as f64 + 0.5 - mover.cy;
                let a = (-(dx * dx + dy * dy) / (2.0 * (0.6 * r).powi(2))).exp();
                for (c, col) in [0.95, 0.85, 0.3].iter().enumerate() {
                    img[c * n + y * width + x] = (base * (1.0 - a) + col * a) as f32;
                }
            }
        }
        let inside = |x: usize, y: usize| mover.contains(x, y);
        let flow = flow_field(width, height, &[(&inside, mover.vx, mover.vy)])?;
        out.push(SynthFrame {
            frame: Tensor::new(vec![3, height, width], img)?,
            flow,
            fixations: mover.fixations(&mut rng, width, height, 6),
            moving: mover.bounds(width, height),
        });
        mover.advance(width, height);
    }
    Ok(SynthClip {
        width,
        height,
        frames: out,
        static_regions: Vec::new(),
    })
}

/// Saliency follows a camouflaged moving disc. Plainly visible static
/// squares off the mover's path each carry a disc of flow with the mover's
/// size and speed in a fresh random direction every frame. Crowded clips may
/// hold fewer than [`STATIC_SQUARES`] squares, or none.
/// Number of static squares in a motion-dominant clip.
pub const STATIC_SQUARES: usize = 3;

pub fn motion_dominant_clip(width: usize, height: usize, frames: usize, seed: u64) -> Result<SynthClip> {
    check_size(width, height, frames)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = width.min(height) as f64 / 8.0;
    let side = (2.0 * r).round() as usize;
    let mut mover = Mover::random(&mut rng, width, height, r);
    let path: Vec<Region> = {
        let mut m = mover.clone();
        (0..frames)
            .map(|_| {
                let b = m.bounds(width, height);
                m.advance(width, height);
                b
            })
            .collect()
    };
    let margin = side / 4;
    let mut squares: Vec<Region> = Vec::new();
    for _ in 0..256 {
        if squares.len() == STATIC_SQUARES {
            break;
        }
        let cand = Region {
            x: rng.gen_range(margin..=width - side - margin),
            y: rng.gen_range(margin..=height - side - margin),
            w: side,
            h: side,
        };
        if squares.iter().chain(&path).all(|q| !q.overlaps(&cand, 1)) {
            squares.push(cand);
        }
    }
    let spurious: Vec<Mover> = squares
        .iter()
        .map(|q| Mover {
            cx: q.x as f64 + side as f64 / 2.0 + rng.gen_range(-0.5..0.5),
            cy: q.y as f64 + side as f64 / 2.0 + rng.gen_range(-0.5..0.5),
            vx: 0.0,
            vy: 0.0,
            r,
        })
        .collect();
    let n = width * height;
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut img = vec![0.0f32; 3 * n];
        for y in 0..height {
            for x in 0..width {
                let px: [f64; 3] = if squares.iter().any(|q| q.contains(x, y)) {
                    [0.85, 0.2, 0.2]
                } else {
                    let g = 0.25 + 0.5 * rng.gen::<f64>();
                    [g, g, g]
                };
                for c in 0..3 {
                    img[c * n + y * width + x] = px[c] as f32;
                }
            }
        }
        let speed = mover.vx.hypot(mover.vy);
        let mut patches: Vec<(Box<dyn Fn(usize, usize) -> bool + '_>, f64, f64)> = Vec::new();
        for s in &spurious {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            patches.push((Box::new(move |x, y| s.contains(x, y)), speed * angle.cos(), speed * angle.sin()));
        }
        let current = mover.clone();
        patches.push((Box::new(move |x, y| current.contains(x, y)), mover.vx, mover.vy));
        let refs: Vec<(&dyn Fn(usize, usize) -> bool, f64, f64)> =
            patches.iter().map(|(f, vx, vy)| (f.as_ref(), *vx, *vy)).collect();
        let flow = flow_field(width, height, &refs)?;
        out.push(SynthFrame {
            frame: Tensor::new(vec![3, height, width], img)?,
            flow,
            fixations: mover.fixations(&mut rng, width, height, 6),
            moving: mover.bounds(width, height),
        });
        mover.advance(width, height);
    }
    Ok(SynthClip {
        width,
        height,
        frames: out,
        static_regions: squares,
    })
}

/// Unstructured samples: uniform noise frames and flow images with one to
/// five random fixations each.
pub fn random_samples(width: usize, height: usize, count: usize, seed: u64, sigma_px: f64) -> Result<Vec<TrainSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let frame = Tensor::from_fn(&[3, height, width], |_| rng.gen::<f32>());
            let flow = Tensor::from_fn(&[3, height, width], |_| rng.gen::<f32>());
            let n = rng.gen_range(1..=5);
            let pts: Vec<(usize, usize)> = (0..n)
                .map(|_| (rng.gen_range(0..width), rng.gen_range(0..height)))
                .collect();
            TrainSample::new(frame, flow, FixationMap::from_points(height, width, &pts)?, sigma_px)
        })
        .collect()
}

impl SynthClip {
    /// In-memory training samples.
    pub fn samples(&self, sigma_px: f64) -> Result<Vec<TrainSample>> {
        self.frames
            .iter()
            .map(|f| {
                let pts: Vec<(usize, usize)> = f.fixations.iter().map(|&(x, y)| (x as usize, y as usize)).collect();
                let fix = FixationMap::from_points(self.height, self.width, &pts)?;
                TrainSample::new(f.frame.clone(), f.flow.clone(), fix, sigma_px)
            })
            .collect()
    }

    /// Writes `frames/`, `flow/`, `fixations/` and `manifest.txt` under
    /// `dir` and returns the manifest path. Images are 8-bit PPM.
    pub fn write(&self, dir: &Path, sequence: &str, sigma_px: Option<f64>) -> Result<PathBuf> {
        let mut records = Vec::with_capacity(self.frames.len());
        for sub in ["frames", "flow", "fixations"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for (i, f) in self.frames.iter().enumerate() {
            let rec = ManifestRecord {
                frame: PathBuf::from(format!("frames/{i:04}.ppm")),
                flow: PathBuf::from(format!("flow/{i:04}.ppm")),
                fixations: PathBuf::from(format!("fixations/{i:04}.csv")),
            };
            write_ppm(&dir.join(&rec.frame), &f.frame)?;
            write_ppm(&dir.join(&rec.flow), &f.flow)?;
            let csv: String = f.fixations.iter().map(|(x, y)| format!("{x},{y}\n")).collect();
            let p = dir.join(&rec.fixations);
            fs::write(&p, format!("x,y\n{csv}")).map_err(|e| Error::io(&p, e))?;
            records.push(rec);
        }
        let manifest = SequenceManifest {
            sequence: sequence.to_string(),
            width: self.width,
            height: self.height,
            sigma: sigma_px,
            records,
            base_dir: dir.to_path_buf(),
        };
        let path = dir.join("manifest.txt");
        manifest.save(&path)?;
        Ok(path)
    }
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use gatedsal_core::io::{
    load_checkpoint, load_fixation_map, load_inputs, load_samples, model_config_from_kv, read_map, save_checkpoint,
    write_map_gstn, write_pgm, KeyValues, SequenceManifest,
};
use gatedsal_core::metrics::{evaluate_sequence, SaliencyMap};
use gatedsal_core::model::{ModelConfig, StreamOutputs, TwoStreamModel};
use gatedsal_core::synth::{motion_dominant_clip, moving_blob_clip, random_samples};
use gatedsal_core::tensor::{GradCheckConfig, Tensor};
use gatedsal_core::train::{check_model_gradients, train as run_training, write_loss_log, Batch, TrainConfig};

use crate::{EvalArgs, GatesArgs, GradcheckArgs, PredictArgs, SynthArgs, TrainArgs};
use crate::{EXIT_DEGENERATE, EXIT_GRADCHECK_FAILED};

/// Flag, then manifest, then configuration.
fn pick_sigma(flag: Option<f64>, manifest: Option<f64>, config: f64) -> Result<f64> {
    let sigma = flag.or(manifest).unwrap_or(config);
    if !(sigma > 0.0 && sigma.is_finite()) {
        bail!("sigma must be positive, got {sigma}");
    }
    Ok(sigma)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::load(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn map_name(index: usize, kind: &str, ext: &str) -> String {
    format!("frame_{index:05}_{kind}.{ext}")
}

/// Plane `index` of a `[B,1,H,W]` tensor.
fn plane(t: &Tensor<f32>, index: usize) -> Result<SaliencyMap> {
    let [_, _, h, w] = t.dims4("plane")?;
    let data = t.data()[index * h * w..][..h * w].iter().map(|&v| v as f64).collect();
    Ok(SaliencyMap::new(h, w, data)?)
}

fn write_map(dir: &Path, index: usize, kind: &str, map: &SaliencyMap, pgm: bool) -> Result<()> {
    write_map_gstn(&dir.join(map_name(index, kind, "gstn")), map)?;
    if pgm {
        write_pgm(&dir.join(map_name(index, kind, "pgm")), map)?;
    }
    Ok(())
}

/// Runs the model on every record, in parallel, keeping manifest order.
fn run_model(checkpoint: &Path, manifest: &SequenceManifest) -> Result<Vec<StreamOutputs>> {
    let (cfg, params) = load_checkpoint(checkpoint)?;
    let model = TwoStreamModel::new(cfg)?;
    (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let (frame, flow, _) = load_inputs(manifest, i)?;
            let frames = Tensor::stack(&[frame])?;
            let flows = Tensor::stack(&[flow])?;
            Ok(model.predict(&params, &frames, &flows)?)
        })
        .collect()
}

pub fn train(a: TrainArgs) -> Result<u8> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let mut samples = Vec::new();
    for path in &a.manifest {
        let manifest = SequenceManifest::load(path)?;
        let sigma = pick_sigma(a.sigma, manifest.sigma, cfg.sigma)?;
        let loaded = load_samples(&manifest, sigma)?;
        log::info!("{}: {} samples, sigma {sigma} px", manifest.sequence, loaded.len());
        samples.extend(loaded);
    }
    let outcome = run_training(&samples, &cfg, cfg.seed)?;
    save_checkpoint(&a.out, &cfg.model, &outcome.params)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let file = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut w = BufWriter::new(file);
    write_loss_log(&mut w, &outcome.log)?;
    w.flush()?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        println!(
            "trained {} steps on {} samples: loss {:.5} -> {:.5}",
            outcome.log.len(),
            samples.len(),
            first.total,
            last.total
        );
    }
    Ok(0)
}

pub fn predict(a: PredictArgs) -> Result<u8> {
    let manifest = SequenceManifest::load(&a.manifest)?;
    create_dir(&a.out)?;
    let outputs = run_model(&a.checkpoint, &manifest)?;
    for (i, o) in outputs.iter().enumerate() {
        write_map(&a.out, i, "final", &plane(&o.fused, 0)?, a.pgm)?;
        write_map(&a.out, i, "appearance", &plane(&o.appearance, 0)?, a.pgm)?;
        write_map(&a.out, i, "temporal", &plane(&o.temporal, 0)?, a.pgm)?;
    }
    println!("wrote maps for {} frames to {}", outputs.len(), a.out.display());
    Ok(0)
}

fn find_prediction(dir: &Path, index: usize, kind: &str) -> Result<PathBuf> {
    for ext in ["gstn", "pgm"] {
        let p = dir.join(map_name(index, kind, ext));
        if p.is_file() {
            return Ok(p);
        }
    }
    bail!("no prediction {} in {}", map_name(index, kind, "{gstn,pgm}"), dir.display())
}

pub fn eval(a: EvalArgs) -> Result<u8> {
    let manifest = SequenceManifest::load(&a.manifest)?;
    let cfg = load_config(a.config.as_deref())?;
    let sigma = pick_sigma(a.sigma, manifest.sigma, cfg.sigma)?;
    let (preds, fixations): (Vec<SaliencyMap>, Vec<_>) = (0..manifest.len())
        .into_par_iter()
        .map(|i| -> Result<_> {
            let path = find_prediction(&a.pred, i, &a.kind)?;
            let pred = read_map(&path)?;
            let fix = load_fixation_map(&manifest, i)?;
            if (pred.height(), pred.width()) != (fix.height(), fix.width()) {
                bail!(
                    "{}: map is {}x{}, sequence resolution is {}x{}",
                    path.display(),
                    pred.width(),
                    pred.height(),
                    fix.width(),
                    fix.height()
                );
            }
            Ok((pred, fix))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let report = evaluate_sequence(&preds, &fixations, sigma)?;

    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    report.write_csv(&mut w)?;
    w.flush()?;
    let summary = a.out.with_extension("summary");
    fs::write(&summary, report.summary_kv()).with_context(|| format!("writing {}", summary.display()))?;
    println!("{}", report.summary_line());

    let degenerate = report.degenerate_count();
    if degenerate > 0 {
        eprintln!("warning: {degenerate} frame(s) flagged as degenerate; see {}", a.out.display());
        return Ok(EXIT_DEGENERATE);
    }
    Ok(0)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<u8> {
    let (model_cfg, loss) = match &a.config {
        Some(p) => {
            let kv = KeyValues::load(p)?;
            let cfg = TrainConfig::from_kv(&kv)?;
            (model_config_from_kv(&kv, cfg.model)?, cfg.loss)
        }
        None => (ModelConfig::default(), TrainConfig::default().loss),
    };
    if a.size == 0 || a.size % 16 != 0 {
        bail!("--size must be a positive multiple of 16, got {}", a.size);
    }
    if a.batch == 0 {
        bail!("--batch must be positive");
    }
    let model = TwoStreamModel::new(model_cfg)?;
    let params = model.init_params(a.seed);
    let samples = random_samples(a.size, a.size, a.batch, a.seed, a.size as f64 / 8.0)?;
    let batch = Batch::new(&samples.iter().collect::<Vec<_>>())?;
    let cfg = GradCheckConfig {
        tolerance: a.tolerance,
        max_coords: a.max_coords,
        seed: a.seed,
        ..Default::default()
    };
    let report = check_model_gradients(&model, &params, &batch, &loss, &cfg)?;
    for (group, err) in report.by_group(2) {
        let mark = if err <= a.tolerance { "ok" } else { "FAIL" };
        println!("{group:<32} max rel error {err:.3e}  {mark}");
    }
    println!("overall max rel error {:.3e} (tolerance {:.1e})", report.max_rel_error(), a.tolerance);
    Ok(if report.passed() { 0 } else { EXIT_GRADCHECK_FAILED })
}

pub fn gates(a: GatesArgs) -> Result<u8> {
    let manifest = SequenceManifest::load(&a.manifest)?;
    create_dir(&a.out)?;
    let outputs = run_model(&a.checkpoint, &manifest)?;
    let regions = a.regions;
    let mut csv = String::from("frame_index,region_index,x,y,w,h,mean_p,mean_gt\n");
    for (i, o) in outputs.iter().enumerate() {
        write_map(&a.out, i, "gate", &plane(o.gate.appearance(), 0)?, a.pgm)?;
        for (r, reg) in regions.iter().enumerate() {
            let p = o.gate.region_mean(0, reg.x, reg.y, reg.w, reg.h)?;
            csv.push_str(&format!("{i},{r},{},{},{},{},{p},{}\n", reg.x, reg.y, reg.w, reg.h, 1.0 - p));
        }
    }
    if !regions.is_empty() {
        let path = a.out.join("gates.csv");
        fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote gate maps for {} frames to {}", outputs.len(), a.out.display());
    Ok(0)
}

pub fn synth(a: SynthArgs) -> Result<u8> {
    let clip = match a.kind.as_str() {
        "blob" => moving_blob_clip(a.width, a.height, a.frames, a.seed)?,
        _ => motion_dominant_clip(a.width, a.height, a.frames, a.seed)?,
    };
    create_dir(&a.out)?;
    let manifest = clip.write(&a.out, &a.sequence, a.sigma)?;
    if !clip.static_regions.is_empty() {
        let list: Vec<String> = clip
            .static_regions
            .iter()
            .map(|r| format!("{},{},{},{}", r.x, r.y, r.w, r.h))
            .collect();
        let path = a.out.join("static_regions.txt");
        fs::write(&path, list.join(";") + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", manifest.display());
    Ok(0)
}

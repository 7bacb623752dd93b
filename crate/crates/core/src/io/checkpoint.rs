//! Model checkpoints.
//!
//! Layout (little endian): `b"GSCK"`, `u32` version, `u32` length and UTF-8
//! text of the model configuration as `key=value` lines, `u32` parameter
//! count, then per parameter a `u32` name length, the UTF-8 name and the
//! tensor as a GSTN blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::KeyValues;
use crate::blocks::ParamSet;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TwoStreamModel};
use crate::tensor::{read_gstn, write_gstn};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model configuration as `key=value` text.
pub fn model_config_text(cfg: &ModelConfig) -> String {
    let w = cfg.widths;
    format!(
        "in_channels={}\nwidths={},{},{},{}\nml_channels={}\ngate_channels={}\n",
        cfg.in_channels, w[0], w[1], w[2], w[3], cfg.ml_channels, cfg.gate_channels
    )
}

/// Applies any model keys present in `kv` on top of `base`.
pub fn model_config_from_kv(kv: &KeyValues, base: ModelConfig) -> Result<ModelConfig> {
    let mut cfg = base;
    if let Some(v) = kv.get("in_channels")? {
        cfg.in_channels = v;
    }
    if let Some(w) = kv.get_list::<usize>("widths")? {
        cfg.widths = w
            .try_into()
            .map_err(|w: Vec<usize>| Error::Config(format!("widths needs 4 entries, got {}", w.len())))?;
    }
    if let Some(v) = kv.get("ml_channels")? {
        cfg.ml_channels = v;
    }
    if let Some(v) = kv.get("gate_channels")? {
        cfg.gate_channels = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn len_u32(n: usize) -> std::io::Result<u32> {
    u32::try_from(n).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "length exceeds u32"))
}

pub fn write_checkpoint<W: Write>(mut out: W, cfg: &ModelConfig, params: &ParamSet) -> std::io::Result<()> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    put_u32(&mut out, CHECKPOINT_VERSION)?;
    let text = model_config_text(cfg);
    put_u32(&mut out, len_u32(text.len())?)?;
    out.write_all(text.as_bytes())?;
    put_u32(&mut out, len_u32(params.len())?)?;
    for (name, t) in params.iter() {
        put_u32(&mut out, len_u32(name.len())?)?;
        out.write_all(name.as_bytes())?;
        write_gstn(&mut out, t)?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_string<R: Read>(r: &mut R, len: u32, what: &str) -> std::io::Result<String> {
    if len > 1 << 20 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{what} length {len} is implausible"),
        ));
    }
    let mut b = vec![0u8; len as usize];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{what} is not UTF-8")))
}

/// Reads a checkpoint and checks its parameters against the model it
/// describes.
pub fn read_checkpoint<R: Read>(mut input: R, origin: &Path) -> Result<(ModelConfig, ParamSet)> {
    let fmt = |e: std::io::Error| Error::format(origin, None, e.to_string());
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(fmt)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, None, "not a checkpoint (bad magic)"));
    }
    let version = get_u32(&mut input).map_err(fmt)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(origin, None, format!("unsupported checkpoint version {version}")));
    }
    let len = get_u32(&mut input).map_err(fmt)?;
    let text = get_string(&mut input, len, "configuration").map_err(fmt)?;
    let kv = KeyValues::parse(&text, origin)?;
    kv.reject_unknown(&["in_channels", "widths", "ml_channels", "gate_channels"])?;
    let cfg = model_config_from_kv(&kv, ModelConfig::default())?;
    let count = get_u32(&mut input).map_err(fmt)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let n = get_u32(&mut input).map_err(fmt)?;
        let name = get_string(&mut input, n, "parameter name").map_err(fmt)?;
        let t = read_gstn(&mut input).map_err(fmt)?;
        if params.insert(name.clone(), t).is_some() {
            return Err(Error::format(origin, None, format!("duplicate parameter {name}")));
        }
    }
    let model = TwoStreamModel::new(cfg)?;
    params.check_against(&model.param_specs())?;
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ParamSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, cfg, params).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamSet)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), path)
}

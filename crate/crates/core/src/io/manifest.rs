//! Sequence manifests.
//!
//! ```text
//! # comment
//! @sequence	clip01
//! @resolution	64	48
//! @sigma	6
//! frames/0000.ppm	flow/0000.ppm	fix/0000.csv
//! ```
//!
//! Fields are tab separated. `@resolution` is width then height. Record
//! paths are relative to the manifest's directory unless absolute, and
//! records are in temporal order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub frame: PathBuf,
    pub flow: PathBuf,
    pub fixations: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceManifest {
    pub sequence: String,
    pub width: usize,
    pub height: usize,
    pub sigma: Option<f64>,
    pub records: Vec<ManifestRecord>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

fn positive_int(path: &Path, line: usize, s: &str, what: &str) -> Result<usize> {
    match s.trim().parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::format(path, Some(line), format!("{what} must be a positive integer, got {s:?}"))),
    }
}

impl SequenceManifest {
    /// Parses manifest text. `origin` is used in error messages and its
    /// parent directory becomes `base_dir`.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut sequence = None;
        let mut resolution = None;
        let mut sigma = None;
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim_end_matches('\r');
            if content.trim().is_empty() || content.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = content.split('\t').collect();
            let bad = |msg: String| Error::format(origin, Some(line), msg);
            match fields[0] {
                "@sequence" => {
                    if fields.len() != 2 || fields[1].trim().is_empty() {
                        return Err(bad("@sequence takes one id".into()));
                    }
                    sequence = Some(fields[1].trim().to_string());
                }
                "@resolution" => {
                    if fields.len() != 3 {
                        return Err(bad("@resolution takes width and height".into()));
                    }
                    let w = positive_int(origin, line, fields[1], "width")?;
                    let h = positive_int(origin, line, fields[2], "height")?;
                    resolution = Some((w, h));
                }
                "@sigma" => {
                    let s = fields
                        .get(1)
                        .filter(|_| fields.len() == 2)
                        .and_then(|s| s.trim().parse::<f64>().ok())
                        .filter(|s| *s > 0.0 && s.is_finite())
                        .ok_or_else(|| bad("@sigma takes one positive number".into()))?;
                    sigma = Some(s);
                }
                d if d.starts_with('@') => return Err(bad(format!("unknown directive {d}"))),
                _ => {
                    if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                        return Err(bad(format!(
                            "expected frame, flow and fixation paths separated by tabs, found {} fields",
                            fields.len()
                        )));
                    }
                    records.push(ManifestRecord {
                        frame: PathBuf::from(fields[0].trim()),
                        flow: PathBuf::from(fields[1].trim()),
                        fixations: PathBuf::from(fields[2].trim()),
                    });
                }
            }
        }
        let sequence = sequence.ok_or_else(|| Error::format(origin, None, "missing @sequence"))?;
        let (width, height) = resolution.ok_or_else(|| Error::format(origin, None, "missing @resolution"))?;
        Ok(Self {
            sequence,
            width,
            height,
            sigma,
            records,
            base_dir: origin.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Canonical text form: directives first, then one line per record.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "@sequence\t{}", self.sequence);
        let _ = writeln!(s, "@resolution\t{}\t{}", self.width, self.height);
        if let Some(sigma) = self.sigma {
            let _ = writeln!(s, "@sigma\t{sigma}");
        }
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}",
                r.frame.display(),
                r.flow.display(),
                r.fixations.display()
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

//! Flat `key=value` text files.

use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Parsed `key=value` pairs in file order. Blank lines and lines starting
/// with `#` are ignored; whitespace around keys and values is trimmed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    origin: String,
    entries: IndexMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::format(origin, Some(i + 1), format!("expected key=value, found {line:?}")));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::format(origin, Some(i + 1), "empty key"));
            }
            if entries.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(Error::format(origin, Some(i + 1), format!("duplicate key {key}")));
            }
        }
        Ok(Self {
            origin: origin.display().to_string(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| {
                Error::format(&self.origin, Some(*line), format!("invalid value {v:?} for {key}"))
            }),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| Error::format(&self.origin, Some(*line), format!("invalid list {v:?} for {key}"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::format(&self.origin, Some(*line), format!("unknown key {k}")));
            }
        }
        Ok(())
    }
}

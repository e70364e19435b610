//! Flat `key = value` configuration files.
//!
//! Grammar: one entry per line, `#` starts a comment, blank lines are
//! ignored, keys are unique, whitespace around keys and values is trimmed.
//! Values are free text; list-valued keys use commas.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValueConfig {
    origin: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValueConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                location: format!("{origin}:{line_no}"),
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    location: format!("{origin}:{line_no}"),
                    message: format!("invalid key `{key}`"),
                });
            }
            if let Some((_, first)) = entries.get(key) {
                return Err(Error::Parse {
                    location: format!("{origin}:{line_no}"),
                    message: format!("key `{key}` already set on line {first}"),
                });
            }
            entries.insert(key.to_string(), (value.trim().to_string(), line_no));
        }
        Ok(KeyValueConfig {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parsed value of `key`, `None` when absent.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e: T::Err| Error::Parse {
                location: format!("{}:{line}", self.origin),
                message: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    /// Comma-separated list under `key` (empty when absent).
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// `(suffix, value)` for every key of the form `prefix.suffix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries.iter().filter_map(move |(k, (v, _))| {
            k.strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|suffix| (suffix, v.as_str()))
        })
    }

    /// Error on the first key that is neither listed nor under a listed prefix.
    pub fn reject_unknown(&self, keys: &[&str], prefixes: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            let known = keys.contains(&k.as_str())
                || prefixes
                    .iter()
                    .any(|p| k.strip_prefix(p).is_some_and(|r| r.starts_with('.')));
            if !known {
                return Err(Error::Schema(format!("{}:{line}: unknown key `{k}`", self.origin)));
            }
        }
        Ok(())
    }

    /// Splits into the entries whose key is in `keys` and the rest.
    pub fn partition(&self, keys: &[&str]) -> (KeyValueConfig, KeyValueConfig) {
        let (a, b): (BTreeMap<_, _>, BTreeMap<_, _>) = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .partition(|(k, _)| keys.contains(&k.as_str()));
        let wrap = |entries| KeyValueConfig {
            origin: self.origin.clone(),
            entries,
        };
        (wrap(a), wrap(b))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (v, _))| (k.as_str(), v.as_str()))
    }
}

/// Parse `lo,hi` into an ordered pair.
pub fn parse_range(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::Parse {
        location: "range".into(),
        message: format!("expected `lo,hi`, found `{text}`"),
    };
    if parts.len() != 2 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Validation(format!("range [{lo}, {hi}] is empty")));
    }
    Ok((lo, hi))
}

//! `manifest.json`: what ran, on which inputs, and what it wrote.
//!
//! Output digests cover every file in the directory except the manifest
//! itself. Timings are informational; everything else is a pure function of
//! the recorded arguments and input files.

use crate::error::{CliError, CliResult, ErrorClass};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Directory relative paths in `argv` refer to.
    pub cwd: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<Timing>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::new(ErrorClass::Io, format!("{}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn digest_inputs(paths: &[&Path]) -> CliResult<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            let abs = std::path::absolute(p)?;
            Ok(FileDigest {
                path: abs.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn collect_files(dir: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir.join(rel))?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let r = rel.join(e.file_name());
        if e.file_type()?.is_dir() {
            collect_files(dir, &r, out)?;
        } else if r != Path::new(MANIFEST_NAME) {
            out.push(r);
        }
    }
    Ok(())
}

/// Digests of every file under `dir` except the manifest, sorted by path.
pub fn digest_outputs(dir: &Path) -> CliResult<Vec<FileDigest>> {
    let mut files = Vec::new();
    collect_files(dir, Path::new(""), &mut files)?;
    files
        .iter()
        .map(|r| {
            Ok(FileDigest {
                path: r
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/"),
                sha256: sha256_file(&dir.join(r))?,
            })
        })
        .collect()
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::new(ErrorClass::Internal, e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_NAME), text + "\n")?;
        Ok(())
    }

    /// Reads a manifest file, or `manifest.json` inside a directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_NAME)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| CliError::new(ErrorClass::Io, format!("{}: {e}", file.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::new(ErrorClass::Parse, format!("{}: {e}", file.display())))
    }

    /// Errors on the first input whose contents changed since the run.
    pub fn check_inputs(&self) -> CliResult<()> {
        for f in &self.inputs {
            let now = sha256_file(Path::new(&f.path))?;
            if now != f.sha256 {
                return Err(CliError::new(
                    ErrorClass::Data,
                    format!("input {} changed since the recorded run", f.path),
                ));
            }
        }
        Ok(())
    }

    /// Errors unless the files under `dir` match the recorded outputs exactly.
    pub fn check_outputs(&self, dir: &Path) -> CliResult<()> {
        let now = digest_outputs(dir)?;
        let recorded: BTreeMap<&str, &str> = self
            .outputs
            .iter()
            .map(|f| (f.path.as_str(), f.sha256.as_str()))
            .collect();
        let current: BTreeMap<&str, &str> = now.iter().map(|f| (f.path.as_str(), f.sha256.as_str())).collect();
        for (p, h) in &recorded {
            match current.get(p) {
                None => return Err(CliError::new(ErrorClass::Data, format!("missing output {p}"))),
                Some(c) if c != h => return Err(CliError::new(ErrorClass::Data, format!("digest mismatch for {p}"))),
                _ => {}
            }
        }
        if let Some(extra) = current.keys().find(|p| !recorded.contains_key(*p)) {
            return Err(CliError::new(ErrorClass::Data, format!("unrecorded file {extra}")));
        }
        Ok(())
    }
}

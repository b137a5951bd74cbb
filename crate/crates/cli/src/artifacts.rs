//! File plumbing shared by the subcommands: hashes, sidecars, overwrite
//! checks and `encoder:fork=path` score arguments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rdm_core::scores::read_scores;
use rdm_core::{EncoderScores, Fork};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| rdm_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(sha256_hex(&bytes))
}

/// `<path><suffix>`, e.g. `model.rdm` → `model.rdm.json`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn ensure_new(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            bail!("refusing to overwrite {} (pass --force)", p.display());
        }
    }
    Ok(())
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| rdm_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| rdm_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Writes `<output>.json`: the command, its effective configuration with
/// hash, the hashes of every input, and command-specific fields.
pub fn write_sidecar(
    output: &Path,
    command: &str,
    config: Value,
    inputs: &[&Path],
    extra: Value,
) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), file_sha256(p)?);
    }
    let config_sha256 = sha256_hex(serde_json::to_string(&config)?.as_bytes());
    let mut doc = json!({
        "command": command,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "config_sha256": config_sha256,
        "inputs": hashes,
    });
    if let (Value::Object(d), Value::Object(e)) = (&mut doc, extra) {
        d.extend(e);
    }
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    write_bytes(&with_suffix(output, ".json"), text.as_bytes())
}

/// One `encoder:fork=path` argument.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSpec {
    pub encoder: String,
    pub fork: Fork,
    pub path: PathBuf,
}

impl FromStr for ScoreSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, path) = s
            .split_once('=')
            .with_context(|| format!("expected encoder:fork=path, got {s:?}"))?;
        let (encoder, fork) = key
            .split_once(':')
            .with_context(|| format!("expected encoder:fork before '=', got {key:?}"))?;
        if encoder.is_empty() || path.is_empty() {
            bail!("empty encoder name or path in {s:?}");
        }
        Ok(ScoreSpec {
            encoder: encoder.to_string(),
            fork: fork.parse()?,
            path: PathBuf::from(path),
        })
    }
}

/// `label=path`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPath {
    pub label: String,
    pub path: PathBuf,
}

impl FromStr for LabeledPath {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (label, path) = s
            .split_once('=')
            .with_context(|| format!("expected label=path, got {s:?}"))?;
        if label.is_empty() || path.is_empty() {
            bail!("empty label or path in {s:?}");
        }
        Ok(LabeledPath {
            label: label.to_string(),
            path: PathBuf::from(path),
        })
    }
}

pub fn read_score_file(path: &Path) -> Result<Vec<f64>> {
    let v = read_scores(path).with_context(|| format!("reading scores {}", path.display()))?;
    Ok(v.into_iter().map(f64::from).collect())
}

/// Groups score files by encoder in order of first appearance.
pub fn load_score_sets(specs: &[ScoreSpec]) -> Result<Vec<EncoderScores<f64>>> {
    let mut out: Vec<EncoderScores<f64>> = Vec::new();
    for s in specs {
        let values = read_score_file(&s.path)?;
        match out.iter_mut().find(|e| e.name == s.encoder) {
            Some(e) => {
                if e.forks.iter().any(|(f, _)| *f == s.fork) {
                    bail!("scores for {}:{} given twice", s.encoder, s.fork);
                }
                e.forks.push((s.fork, values));
            }
            None => out.push(EncoderScores::new(s.encoder.clone(), vec![(s.fork, values)])),
        }
    }
    Ok(out)
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Output directory layout, versioned JSON reports and the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_DIR: &str = "dataset";
pub const WEIGHTS_FILE: &str = "weights.plab";
pub const LOSS_FILE: &str = "train_loss.csv";

/// Every JSON report kind, in pipeline order. Each lives in `<kind>.json`.
pub const REPORT_KINDS: [&str; 10] = [
    "train",
    "baseline",
    "patch",
    "interpolate",
    "localize",
    "trace",
    "scrub",
    "neuron_sweep",
    "saturation",
    "winners",
];

/// Common wrapper of every JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub kind: String,
    pub data: T,
}

pub fn report_path(out: &Path, kind: &str) -> PathBuf {
    out.join(format!("{kind}.json"))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn write_report<T: Serialize>(out: &Path, kind: &str, data: &T) -> Result<PathBuf> {
    let path = report_path(out, kind);
    write_json(
        &path,
        &Envelope {
            schema_version: REPORT_SCHEMA_VERSION,
            kind: kind.to_owned(),
            data,
        },
    )?;
    Ok(path)
}

/// Reads `<kind>.json`, checking its schema version and kind. `hint` names
/// the command that produces it.
pub fn read_report<T: DeserializeOwned>(out: &Path, kind: &str, hint: &str) -> Result<T> {
    let path = report_path(out, kind);
    if !path.exists() {
        return Err(CliError::Missing {
            path,
            hint: format!("run `{hint}` first"),
        });
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Schema {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(REPORT_SCHEMA_VERSION as u64) {
        return Err(CliError::Schema {
            path,
            msg: format!(
                "schema version {} (expected {REPORT_SCHEMA_VERSION}); regenerate it with `{hint}`",
                version.map_or("missing".to_owned(), |v| v.to_string())
            ),
        });
    }
    let env: Envelope<T> = serde_json::from_value(value).map_err(|e| CliError::Schema {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    if env.kind != kind {
        return Err(CliError::Schema {
            path,
            msg: format!("holds a {:?} report, expected {kind:?}", env.kind),
        });
    }
    Ok(env.data)
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
    write_bytes(path, &bytes)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Files under `dir`, as sorted `/`-separated relative paths.
pub fn list_files(dir: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        let rd = fs::read_dir(dir).map_err(|e| CliError::io(format!("listing {}", dir.display()), e))?;
        for entry in rd {
            let entry = entry.map_err(|e| CliError::io(format!("listing {}", dir.display()), e))?;
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root");
                out.push(
                    rel.components()
                        .map(|c| c.as_os_str().to_string_lossy())
                        .collect::<Vec<_>>()
                        .join("/"),
                );
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub sub_seeds: BTreeMap<String, u64>,
    /// Settings that determine the results.
    pub config: serde_json::Value,
    /// Relative path → sha256 of every other file in the directory.
    pub files: BTreeMap<String, String>,
}

/// Rewrites `manifest.json` to cover every file currently in `out`.
pub fn write_manifest(out: &Path, cfg: &RunConfig) -> Result<Manifest> {
    let mut files = BTreeMap::new();
    for rel in list_files(out)? {
        if rel != MANIFEST_FILE {
            let h = sha256_file(&out.join(&rel))?;
            files.insert(rel, h);
        }
    }
    let m = Manifest {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: "modepatch".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        sub_seeds: cfg.seeds(),
        config: cfg.science(),
        files,
    };
    write_json(&out.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

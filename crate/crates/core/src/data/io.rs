// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset directory: `dataset.json` plus one PLAB archive per key holding
//! `seeg/<key>/<mode>` and `mel/<key>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GenConfig, Mode, PairedEntry, PairedSet, PerMode, Trial};
use crate::error::{Error, Result};
use crate::plab::TensorArchive;

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    gen_config: GenConfig,
    keys: Vec<String>,
}

fn key_file(dir: &Path, key: &str) -> std::path::PathBuf {
    dir.join(format!("{key}.plab"))
}

/// Writes `set` into `dir` (created if missing). Output bytes depend only on
/// the set's contents.
pub fn save_dataset(set: &PairedSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        schema_version: DATASET_SCHEMA_VERSION,
        gen_config: set.gen_config().clone(),
        keys: set.keys().map(str::to_owned).collect(),
    };
    let path = dir.join(DATASET_MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    for e in set.entries() {
        let mut a = TensorArchive::new();
        for m in Mode::ALL {
            a.push(format!("seeg/{}/{m}", e.key), e.trial(m).seeg.clone())?;
        }
        a.push(format!("mel/{}", e.key), e.mel_target.clone())?;
        a.write(&key_file(dir, &e.key))?;
    }
    Ok(())
}

/// Reads a directory written by [`save_dataset`], validating pairing and
/// shapes.
pub fn load_dataset(dir: &Path) -> Result<PairedSet> {
    let path = dir.join(DATASET_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::format(
            &path,
            format!(
                "schema version {} (expected {DATASET_SCHEMA_VERSION})",
                manifest.schema_version
            ),
        ));
    }
    manifest.gen_config.validate()?;
    if manifest.keys.len() != manifest.gen_config.total_keys() {
        return Err(Error::format(
            &path,
            format!(
                "{} keys listed but n_keys + eval_keys = {}",
                manifest.keys.len(),
                manifest.gen_config.total_keys()
            ),
        ));
    }
    let entries = manifest
        .keys
        .iter()
        .map(|key| {
            let file = key_file(dir, key);
            let a = TensorArchive::read(&file)?;
            if a.len() != 4 {
                return Err(Error::Pairing(format!(
                    "{} holds {} tensors, expected 3 trials and 1 target",
                    file.display(),
                    a.len()
                )));
            }
            let mel_target = a.require(&format!("mel/{key}"))?.clone();
            let mut trials = Vec::with_capacity(3);
            for m in Mode::ALL {
                trials.push(Trial {
                    key: key.clone(),
                    mode: m,
                    seeg: a.require(&format!("seeg/{key}/{m}"))?.clone(),
                });
            }
            let mut it = trials.into_iter();
            let trials = PerMode::from_fn(|_| it.next().expect("three trials"));
            Ok(PairedEntry {
                key: key.clone(),
                mel_target,
                trials,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PairedSet::new(entries, manifest.gen_config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    fn small() -> GenConfig {
        GenConfig {
            n_keys: 3,
            eval_keys: 0,
            t_in: 64,
            c_in: 4,
            mel_bins: 10,
            ..GenConfig::default()
        }
    }

    #[test]
    fn round_trip_and_byte_identical() {
        let set = generate(&small()).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_dataset(&set, a.path()).unwrap();
        save_dataset(&generate(&small()).unwrap(), b.path()).unwrap();
        let back = load_dataset(a.path()).unwrap();
        assert_eq!(back, set);
        for name in ["dataset.json", "k0000.plab", "k0002.plab"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn missing_key_file() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&generate(&small()).unwrap(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("k0001.plab")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn incomplete_archive_is_pairing_error() {
        let dir = tempfile::tempdir().unwrap();
        let set = generate(&small()).unwrap();
        save_dataset(&set, dir.path()).unwrap();
        let mut a = TensorArchive::new();
        let e = &set.entries()[0];
        a.push("mel/k0000", e.mel_target.clone()).unwrap();
        a.push("seeg/k0000/vocalized", e.trial(Mode::Vocalized).seeg.clone())
            .unwrap();
        a.write(&dir.path().join("k0000.plab")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Pairing(_))));
    }
}

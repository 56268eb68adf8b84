//! Output files: CSV tables and JSON documents stamped with the config hash,
//! and the run manifest that records the SHA-256 of every file written.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
const HASH_PREFIX: &str = "# config_sha256=";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub stages: BTreeMap<String, Stage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage {
    /// File name relative to the output directory -> SHA-256.
    pub files: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

/// Collects files for one stage as they are written.
pub struct StageWriter<'a> {
    dir: &'a Path,
    hash: &'a str,
    files: BTreeMap<String, String>,
}

impl<'a> StageWriter<'a> {
    pub fn new(dir: &'a Path, hash: &'a str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir,
            hash,
            files: BTreeMap::new(),
        })
    }

    /// Writes a CSV whose first line is the config hash comment. Numbers are
    /// written with 17 significant digits.
    pub fn csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), CliError> {
        let mut buf = format!("{HASH_PREFIX}{}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header).map_err(|e| CliError::io(name, e))?;
            for row in rows {
                w.write_record(row.iter().map(|v| format!("{v:.16e}")))
                    .map_err(|e| CliError::io(name, e))?;
            }
            w.flush().map_err(|e| CliError::io(name, e))?;
        }
        self.put(name, &buf)
    }

    /// Writes pretty JSON with a `config_sha256` field added at the top level.
    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::io(name, e))?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert("config_sha256".into(), self.hash.into());
        }
        let mut text = serde_json::to_vec_pretty(&v).map_err(|e| CliError::io(name, e))?;
        text.push(b'\n');
        self.put(name, &text)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        f.write_all(bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(name.to_string(), sha256(bytes));
        Ok(())
    }

    pub fn finish(self, summary: serde_json::Value) -> Stage {
        Stage {
            files: self.files,
            summary,
        }
    }
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn new_manifest(config: &RunConfig) -> Manifest {
    Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config.hash(),
        config: config.clone(),
        stages: BTreeMap::new(),
    }
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_vec_pretty(manifest).map_err(|e| CliError::io(&path, e))?;
    text.push(b'\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Reads the manifest in `dir` and refuses it if it was made under a
/// different config.
pub fn read_manifest(dir: &Path, config: &RunConfig) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(|_| CliError::Precondition(format!("no {MANIFEST} in {}; run `cycle` first", dir.display())))?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| CliError::io(&path, e))?;
    let expected = config.hash();
    if manifest.config_sha256 != expected {
        return Err(CliError::Stale {
            path,
            expected,
            found: manifest.config_sha256,
        });
    }
    Ok(manifest)
}

/// Reads a file listed under `stage` after checking its SHA-256 against the
/// manifest.
pub fn read_verified(dir: &Path, manifest: &Manifest, stage: &str, name: &str) -> Result<Vec<u8>, CliError> {
    let entry = manifest
        .stages
        .get(stage)
        .ok_or_else(|| CliError::Precondition(format!("stage `{stage}` has not been run")))?;
    let expected = entry
        .files
        .get(name)
        .ok_or_else(|| CliError::Precondition(format!("stage `{stage}` did not write {name}")))?;
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let found = sha256(&bytes);
    if &found != expected {
        return Err(CliError::Corrupted {
            path,
            expected: expected.clone(),
            found,
        });
    }
    Ok(bytes)
}

pub fn parse_json<T: DeserializeOwned>(bytes: &[u8], name: &str) -> Result<T, CliError> {
    serde_json::from_slice(bytes).map_err(|e| CliError::io(name, e))
}

/// Rows of a stamped CSV, after checking the stamp.
pub fn parse_csv(bytes: &[u8], name: &str, hash: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::io(name, e))?;
    let stamp = text.lines().next().and_then(|l| l.strip_prefix(HASH_PREFIX));
    if stamp != Some(hash) {
        return Err(CliError::Stale {
            path: PathBuf::from(name),
            expected: hash.to_string(),
            found: stamp.unwrap_or("<none>").to_string(),
        });
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::io(name, e))?;
            rec.iter()
                .map(|s| s.parse::<f64>().map_err(|e| CliError::io(name, e)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = StageWriter::new(dir.path(), "abc").unwrap();
        let values = vec![vec![0.1, std::f64::consts::PI], vec![-1e-300, 6.02214076e23]];
        w.csv("t.csv", &["a".into(), "b".into()], values.clone()).unwrap();
        let stage = w.finish(serde_json::Value::Null);
        let bytes = fs::read(dir.path().join("t.csv")).unwrap();
        assert_eq!(stage.files["t.csv"], sha256(&bytes));
        assert_eq!(parse_csv(&bytes, "t.csv", "abc").unwrap(), values);
        assert!(matches!(parse_csv(&bytes, "t.csv", "xyz"), Err(CliError::Stale { .. })));
    }
}

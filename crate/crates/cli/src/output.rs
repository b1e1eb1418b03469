//! CSV tables, digests and the run manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A CSV table built row by row.
#[derive(Clone, Debug)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Table {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width does not match header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// One file produced by a run, relative to the output directory.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
    pub rows: u64,
}

impl Artifact {
    pub fn table(path: &str, table: &Table) -> Artifact {
        Artifact {
            path: path.to_string(),
            bytes: table.to_bytes(),
            rows: table.len() as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub seed: u64,
    pub tag: u32,
    pub replicas: u64,
    /// Stream id of replica `r`.
    pub stream_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
    pub rows: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config: ExperimentConfig,
    pub streams: StreamInfo,
    pub outputs: Vec<OutputDigest>,
    pub summary: Value,
}

impl RunManifest {
    pub fn digest_of(&self, file: &str) -> Option<&str> {
        self.outputs.iter().find(|o| o.file == file).map(|o| o.sha256.as_str())
    }
}

/// Writes every artifact under `dir` and returns their digests.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<OutputDigest>, CliError> {
    let mut digests = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let path = dir.join(&a.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        std::fs::write(&path, &a.bytes).map_err(|e| io_error(&path, e))?;
        digests.push(OutputDigest {
            file: a.path.clone(),
            sha256: sha256_hex(&a.bytes),
            rows: a.rows,
        });
    }
    Ok(digests)
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

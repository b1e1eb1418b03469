//! Batch runner for the `idla` experiments: configuration, orchestration,
//! CSV output with manifests, and plot-ready aggregation.

use std::fmt;
use std::path::Path;

use idla::IdlaError;

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;
pub mod plot;

pub use config::{Experiment, ExperimentConfig, Probe};
pub use output::RunManifest;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad flags, config or input; exit code 2.
    Usage(String),
    /// The run itself failed; exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<IdlaError> for CliError {
    fn from(e: IdlaError) -> Self {
        match e.root() {
            IdlaError::Domain(_) | IdlaError::Parse(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Runs `config` on a pool of `threads` workers (0: one per core), writes
/// its outputs and `manifest.json` under `config.out`.
pub fn run(config: &ExperimentConfig, threads: usize) -> Result<RunManifest, CliError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let outcome = pool.install(|| experiments::execute(config))?;
    let dir: &Path = &config.out;
    std::fs::create_dir_all(dir).map_err(|e| output::io_error(dir, e))?;
    let outputs = output::write_artifacts(dir, &outcome.artifacts)?;
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        streams: output::StreamInfo {
            seed: config.seed(),
            tag: outcome.tag,
            replicas: config.replicas,
            stream_id: "(tag << 40) | replica".to_string(),
        },
        outputs,
        summary: outcome.summary,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| output::io_error(&path, e))?;
    Ok(manifest)
}

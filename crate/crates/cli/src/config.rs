//! Experiment configuration: a JSON document whose fields can be overridden
//! by command-line flags of the same name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Grow,
    AbelianCheck,
    Shape,
    Directional,
    Tentacle,
    DeepHole,
    Harmonic,
    OracleCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Grow => "grow",
            Experiment::AbelianCheck => "abelian-check",
            Experiment::Shape => "shape",
            Experiment::Directional => "directional",
            Experiment::Tentacle => "tentacle",
            Experiment::DeepHole => "deep-hole",
            Experiment::Harmonic => "harmonic",
            Experiment::OracleCheck => "oracle-check",
        }
    }
}

/// Which estimator the `harmonic` experiment sweeps over its grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Probe {
    /// Grid: intensities. Estimate: probability that both `N_z` counts vanish.
    #[default]
    JointZero,
    /// Grid: intensities. Estimate: chi-square independence p-value.
    PoissonSplit,
    /// Grid: offsets `k`, start `z + k e_1`. Estimate: hit probability.
    HitFar,
    /// Grid: offsets `k`, start `z + k e_2`. Estimate: hit-before-exit probability.
    HitExit,
    /// Grid: gaps. Estimate: mean stopped explorers at `(n - gap, 0, ..)`.
    MeanVisits,
}

fn default_dim() -> usize {
    2
}
fn default_profile() -> f64 {
    1.0
}
fn default_replicas() -> u64 {
    1
}
fn default_budget_factor() -> f64 {
    idla::walk::StepBudget::DEFAULT_FACTOR
}
fn default_out() -> PathBuf {
    PathBuf::from("idla-out")
}
fn default_escape_factor() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Nominal radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Particle count for `abelian-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<u64>,
    #[serde(default = "default_profile")]
    pub alpha: f64,
    #[serde(default = "default_profile")]
    pub beta: f64,
    #[serde(default = "default_profile")]
    pub gamma: f64,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    pub seed: Option<u64>,
    #[serde(default = "default_budget_factor")]
    pub budget_factor: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Radii recorded by `shape`; defaults to `[n]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub radii: Vec<u64>,
    /// Gaps probed by `directional`; defaults to 1..=4.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gaps: Vec<u64>,
    /// Particle count for `oracle-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    /// Green explorers of the three-wave build in `abelian-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    /// Stopping radius (`abelian-check`) or cap radius (`harmonic`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default)]
    pub probe: Probe,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub z: Vec<i32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<f64>,
    /// Exit-ball radius of `hit-exit` and `poisson-split`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default = "default_escape_factor")]
    pub escape_factor: f64,
}

impl ExperimentConfig {
    /// Defaults for every optional field.
    pub fn new(experiment: Experiment, seed: u64) -> ExperimentConfig {
        let doc = serde_json::json!({ "experiment": experiment, "seed": seed });
        serde_json::from_value(doc).expect("defaults deserialize")
    }

    /// Field diagnostics, all at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if !(2..=idla::geometry::MAX_DIM).contains(&self.dim) {
            problems.push(format!(
                "dim: must be in 2..={}, got {}",
                idla::geometry::MAX_DIM,
                self.dim
            ));
        }
        if self.replicas < 1 {
            problems.push("replicas: must be at least 1".to_string());
        }
        if self.seed.is_none() {
            problems.push("seed: required".to_string());
        }
        if !(self.budget_factor > 0.0 && self.budget_factor.is_finite()) {
            problems.push(format!("budget-factor: must be positive, got {}", self.budget_factor));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                problems.push(format!("{name}: must be finite and >= 0, got {v}"));
            }
        }
        let needs_n = matches!(
            self.experiment,
            Experiment::Grow | Experiment::Directional | Experiment::Tentacle | Experiment::DeepHole
        ) || (self.experiment == Experiment::Shape && self.radii.is_empty())
            || (self.experiment == Experiment::Harmonic && self.probe == Probe::MeanVisits);
        if needs_n && self.n.is_none() {
            problems.push(format!("n: required by {}", self.experiment.name()));
        }
        if self.experiment == Experiment::Harmonic {
            if self.probe != Probe::MeanVisits && self.z.len() != self.dim {
                problems.push(format!("z: needs {} coordinates, got {}", self.dim, self.z.len()));
            }
            if self.grid.is_empty() {
                problems.push("grid: required by harmonic".to_string());
            }
            if self.probe == Probe::JointZero && self.radius.is_none() {
                problems.push("radius: required by the joint-zero probe".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("invalid config:\n  {}", problems.join("\n  "))))
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }
}

/// Reads a config file. A run manifest is accepted too: its `config` entry is used.
pub fn load_document(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let mut map = match value {
        Value::Object(map) => map,
        _ => {
            return Err(CliError::Usage(format!(
                "config {} must be a JSON object",
                path.display()
            )))
        }
    };
    if let Some(Value::Object(inner)) = map.remove("config") {
        map = inner;
    }
    Ok(map)
}

/// Overlays `overrides` on `base` and deserializes the result.
pub fn resolve(
    mut base: Map<String, Value>,
    experiment: Experiment,
    overrides: Map<String, Value>,
) -> Result<ExperimentConfig, CliError> {
    if let Some(previous) = base.get("experiment").and_then(Value::as_str) {
        if previous != experiment.name() {
            return Err(CliError::Usage(format!(
                "config is for experiment `{previous}`, not `{}`",
                experiment.name()
            )));
        }
    }
    base.insert("experiment".into(), Value::String(experiment.name().into()));
    base.extend(overrides);
    let config: ExperimentConfig =
        serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    config.validate()?;
    Ok(config)
}

//! Command-line surface.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{self, Experiment, Probe};
use crate::plot::{emit_plot_data, PlotKind, ZeroGeometry};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "idla", version, about = "Internal DLA experiments on Z^d")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow b(n)-particle clusters and write snapshots.
    Grow(RunArgs),
    /// Compare interleaved and three-wave builds on shared instruction stacks.
    AbelianCheck(RunArgs),
    /// Inner and outer errors at one or more radii.
    Shape(RunArgs),
    /// Whether axis sites at distance n - gap are covered.
    Directional(RunArgs),
    /// Green-explorer wave experiment for protrusions.
    Tentacle(RunArgs),
    /// Iterated wave experiment for holes below the nominal radius.
    DeepHole(RunArgs),
    /// Hitting-probability and Poisson-count probes over a grid.
    Harmonic(RunArgs),
    /// Sampled small-cluster law against the exact one.
    OracleCheck(RunArgs),
    /// Aggregate a results CSV into a plot-ready CSV.
    PlotData(PlotArgs),
}

/// Flags mirror config fields; any flag given overrides the config file.
#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    /// JSON config or a previous run's manifest.json.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: one per core). Does not affect results.
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_factor: Option<f64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaps: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<Probe>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<i32>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub escape_factor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Results CSV to aggregate.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Probe site, for zeroprob-vs-lambda.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub z: Option<Vec<i32>>,
    /// Cap radius, for zeroprob-vs-lambda.
    #[arg(long)]
    pub radius: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("flags serialize") {
            Value::Object(map) => map,
            _ => unreachable!(),
        }
    }
}

fn run_experiment(experiment: Experiment, args: &RunArgs) -> Result<(), CliError> {
    let base = match &args.config {
        Some(path) => config::load_document(path)?,
        None => Map::new(),
    };
    let cfg = config::resolve(base, experiment, args.overrides())?;
    let manifest = crate::run(&cfg, args.threads.unwrap_or(0))?;
    let mut stdout = std::io::stdout().lock();
    for o in &manifest.outputs {
        let _ = writeln!(stdout, "{}  {}", o.sha256, cfg.out.join(&o.file).display());
    }
    Ok(())
}

fn plot(args: &PlotArgs) -> Result<(), CliError> {
    let input = std::fs::read(&args.input)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.input.display())))?;
    let geometry = match (&args.z, args.radius) {
        (Some(z), Some(radius)) => Some(ZeroGeometry { z: z.clone(), radius }),
        _ => None,
    };
    let bytes = emit_plot_data(&input, args.kind, geometry.as_ref())?;
    match &args.out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| crate::output::io_error(path, e)),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Runtime(format!("stdout: {e}"))),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn entry<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::EXIT_USAGE } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Grow(a) => run_experiment(Experiment::Grow, a),
        Command::AbelianCheck(a) => run_experiment(Experiment::AbelianCheck, a),
        Command::Shape(a) => run_experiment(Experiment::Shape, a),
        Command::Directional(a) => run_experiment(Experiment::Directional, a),
        Command::Tentacle(a) => run_experiment(Experiment::Tentacle, a),
        Command::DeepHole(a) => run_experiment(Experiment::DeepHole, a),
        Command::Harmonic(a) => run_experiment(Experiment::Harmonic, a),
        Command::OracleCheck(a) => run_experiment(Experiment::OracleCheck, a),
        Command::PlotData(a) => plot(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("idla: {e}");
            e.exit_code()
        }
    }
}

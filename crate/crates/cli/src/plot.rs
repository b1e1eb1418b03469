//! Aggregation of result tables into plot-ready series.

use std::collections::BTreeMap;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use idla::stats::{binomial_std_error, fit_through_origin};

use crate::experiments::{mean_and_stderr, DIRECTIONAL_HEADER, HARMONIC_HEADER, SHAPE_HEADER};
use crate::output::{float, Table};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    /// Shape results: mean errors against `sqrt(log n)`.
    DeltaVsSqrtlog,
    /// Directional results: miss frequency against the squared gap.
    MissprobVsGap2,
    /// Joint-zero harmonic results: zero frequency against `λR/‖z‖^{d-1}`.
    ZeroprobVsLambda,
}

pub const DELTA_PLOT_HEADER: &[&str] = &[
    "n",
    "sqrt_log_n",
    "mean_delta_inner",
    "stderr_delta_inner",
    "mean_delta_outer",
    "stderr_delta_outer",
    "replicas",
    "slope_inner",
    "slope_outer",
];
pub const MISS_PLOT_HEADER: &[&str] = &["n", "gap", "gap_squared", "miss_prob", "stderr", "replicas"];
pub const ZERO_PLOT_HEADER: &[&str] = &["lambda", "scaled", "p_hat", "stderr", "neg_log_p", "replicas"];

/// Geometry needed by [`PlotKind::ZeroprobVsLambda`].
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroGeometry {
    pub z: Vec<i32>,
    pub radius: f64,
}

/// Rows of the input keyed by the required columns.
struct Input {
    columns: Vec<usize>,
    records: Vec<csv::StringRecord>,
}

impl Input {
    fn field<T: std::str::FromStr>(&self, row: usize, col: usize, name: &str) -> Result<T, CliError> {
        let raw = &self.records[row][self.columns[col]];
        raw.parse()
            .map_err(|_| CliError::Usage(format!("row {}: column `{name}` has unparsable value `{raw}`", row + 1)))
    }
}

fn read_input(text: &[u8], required: &[&str], kind: &str) -> Result<Option<Input>, CliError> {
    let mut reader = csv::Reader::from_reader(text);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Usage(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Ok(None);
    }
    let found: Vec<&str> = headers.iter().collect();
    let missing: Vec<&str> = required.iter().copied().filter(|c| !found.contains(c)).collect();
    if !missing.is_empty() {
        return Err(CliError::Usage(format!(
            "input does not match the `{kind}` schema: missing column(s) {}; found [{}]; expected [{}]",
            missing.join(", "),
            found.join(","),
            required.join(",")
        )));
    }
    let columns = required
        .iter()
        .map(|c| found.iter().position(|f| f == c).expect("checked above"))
        .collect();
    let records = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("malformed input: {e}")))?;
    Ok(Some(Input { columns, records }))
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Turns a results table into a plot table of the given kind.
pub fn emit_plot_data(input: &[u8], kind: PlotKind, zero: Option<&ZeroGeometry>) -> Result<Vec<u8>, CliError> {
    let table = match kind {
        PlotKind::DeltaVsSqrtlog => delta_plot(input)?,
        PlotKind::MissprobVsGap2 => miss_plot(input)?,
        PlotKind::ZeroprobVsLambda => {
            let geometry =
                zero.ok_or_else(|| CliError::Usage("zeroprob-vs-lambda needs --z and --radius".to_string()))?;
            zero_plot(input, geometry)?
        }
    };
    Ok(table.to_bytes())
}

fn delta_plot(text: &[u8]) -> Result<Table, CliError> {
    let mut table = Table::new(DELTA_PLOT_HEADER);
    let Some(input) = read_input(text, &SHAPE_HEADER[1..4], "delta-vs-sqrtlog")? else {
        return Ok(table);
    };
    let mut groups: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in 0..input.records.len() {
        let n: u64 = input.field(row, 0, "n")?;
        let g = groups.entry(n).or_default();
        g.0.push(input.field(row, 1, "delta_inner")?);
        g.1.push(input.field(row, 2, "delta_outer")?);
    }
    let xs: Vec<f64> = groups.keys().map(|&n| (n as f64).ln().max(0.0).sqrt()).collect();
    let inner: Vec<(f64, f64)> = groups.values().map(|g| mean_and_stderr(&g.0)).collect();
    let outer: Vec<(f64, f64)> = groups.values().map(|g| mean_and_stderr(&g.1)).collect();
    let slope = |ys: &[(f64, f64)]| {
        let ys: Vec<f64> = ys.iter().map(|p| p.0).collect();
        fit_through_origin(&xs, &ys).map_or(f64::NAN, |f| f.slope)
    };
    let (slope_inner, slope_outer) = (slope(&inner), slope(&outer));
    for (i, (&n, g)) in groups.iter().enumerate() {
        table.push(vec![
            n.to_string(),
            float(xs[i]),
            float(inner[i].0),
            float(inner[i].1),
            float(outer[i].0),
            float(outer[i].1),
            g.0.len().to_string(),
            float(slope_inner),
            float(slope_outer),
        ]);
    }
    Ok(table)
}

fn miss_plot(text: &[u8]) -> Result<Table, CliError> {
    let mut table = Table::new(MISS_PLOT_HEADER);
    let Some(input) = read_input(text, &DIRECTIONAL_HEADER[1..4], "missprob-vs-gap2")? else {
        return Ok(table);
    };
    let mut groups: BTreeMap<(u64, u64), (u64, u64)> = BTreeMap::new();
    for row in 0..input.records.len() {
        let n: u64 = input.field(row, 0, "n")?;
        let gap: u64 = input.field(row, 1, "gap")?;
        let raw = &input.records[row][input.columns[2]];
        let miss = parse_flag(raw)
            .ok_or_else(|| CliError::Usage(format!("row {}: column `miss` has unparsable value `{raw}`", row + 1)))?;
        let g = groups.entry((n, gap)).or_default();
        g.0 += u64::from(miss);
        g.1 += 1;
    }
    for ((n, gap), (misses, total)) in groups {
        let p = misses as f64 / total as f64;
        table.push(vec![
            n.to_string(),
            gap.to_string(),
            (gap * gap).to_string(),
            float(p),
            float(binomial_std_error(p, total)),
            total.to_string(),
        ]);
    }
    Ok(table)
}

fn zero_plot(text: &[u8], geometry: &ZeroGeometry) -> Result<Table, CliError> {
    let mut table = Table::new(ZERO_PLOT_HEADER);
    let Some(input) = read_input(text, &HARMONIC_HEADER[..4], "zeroprob-vs-lambda")? else {
        return Ok(table);
    };
    let dim = geometry.z.len() as i32;
    let norm = geometry.z.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
    if dim < 2 || norm == 0.0 {
        return Err(CliError::Usage(
            "z: needs at least two coordinates and a nonzero norm".to_string(),
        ));
    }
    let scale = geometry.radius / norm.powi(dim - 1);
    for row in 0..input.records.len() {
        let lambda: f64 = input.field(row, 0, "grid_value")?;
        let p: f64 = input.field(row, 1, "estimate")?;
        let stderr: f64 = input.field(row, 2, "stderr")?;
        let replicas: u64 = input.field(row, 3, "replicas")?;
        table.push(vec![
            float(lambda),
            float(lambda * scale),
            float(p),
            float(stderr),
            float(-p.ln()),
            replicas.to_string(),
        ]);
    }
    Ok(table)
}

//! Small statistics toolkit for the Monte Carlo estimators.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{IdlaError, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of a frequency `p` estimated from `n` trials.
pub fn binomial_std_error(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// A least-squares slope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// `1 − SSE / SST` with the centred total sum of squares.
    pub r_squared: f64,
}

/// Fits `y = slope · x` by ordinary least squares.
pub fn fit_through_origin(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    check_fit_input(xs, ys, 2)?;
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    if sxx == 0.0 {
        return Err(IdlaError::Numeric("all regressors are zero".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let slope = sxy / sxx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let dof = (xs.len() - 1) as f64;
    Ok(LinearFit {
        slope,
        intercept: 0.0,
        stderr: (sse / dof / sxx).sqrt(),
        r_squared: r_squared(ys, sse),
    })
}

/// Fits `y = intercept + slope · x` by ordinary least squares.
pub fn fit_affine(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    check_fit_input(xs, ys, 3)?;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(IdlaError::Numeric("regressor has no spread".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = (xs.len() - 2) as f64;
    Ok(LinearFit {
        slope,
        intercept,
        stderr: (sse / dof / sxx).sqrt(),
        r_squared: r_squared(ys, sse),
    })
}

fn check_fit_input(xs: &[f64], ys: &[f64], min_points: usize) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(IdlaError::domain("regressor and response lengths differ"));
    }
    if xs.len() < min_points {
        return Err(IdlaError::domain(format!("need at least {min_points} points to fit")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(IdlaError::Numeric("non-finite value in fit input".into()));
    }
    Ok(())
}

fn r_squared(ys: &[f64], sse: f64) -> f64 {
    let my = mean(ys);
    let sst: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sst == 0.0 {
        if sse == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - sse / sst
    }
}

/// Variance-to-mean ratio; 1 for Poisson counts.
pub fn dispersion_index(counts: &[f64]) -> f64 {
    variance(counts) / mean(counts)
}

/// Sampling standard deviation of the dispersion index of `n` Poisson draws.
pub fn dispersion_sigma(n: usize) -> f64 {
    (2.0 / (n as f64 - 1.0)).sqrt()
}

/// Pearson chi-square test of independence on a contingency table.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
}

/// Independence test for paired counts. Each margin is binned from below
/// so that every bin but the last holds at least `min_mass` of the sample;
/// the last bin absorbs the tail.
pub fn chi_square_independence(pairs: &[(u64, u64)], min_mass: f64) -> Result<ChiSquareTest> {
    if pairs.is_empty() {
        return Err(IdlaError::domain("no samples for the independence test"));
    }
    let xs: Vec<u64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<u64> = pairs.iter().map(|p| p.1).collect();
    let bx = bin_edges(&xs, min_mass);
    let by = bin_edges(&ys, min_mass);
    if bx.len() < 2 || by.len() < 2 {
        return Err(IdlaError::InsufficientResolution(
            "a margin is concentrated on a single bin".into(),
        ));
    }
    let mut table = vec![vec![0f64; by.len()]; bx.len()];
    for &(x, y) in pairs {
        table[bin_of(&bx, x)][bin_of(&by, y)] += 1.0;
    }
    let n = pairs.len() as f64;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..by.len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = rows[i] * cols[j] / n;
            statistic += (obs - expected).powi(2) / expected;
        }
    }
    let dof = ((bx.len() - 1) * (by.len() - 1)) as u64;
    let dist = ChiSquared::new(dof as f64).map_err(|e| IdlaError::Numeric(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}

/// Lower edges of the bins.
fn bin_edges(values: &[u64], min_mass: f64) -> Vec<u64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let need = ((min_mass * values.len() as f64).ceil() as usize).max(1);
    let mut edges = vec![sorted[0]];
    let mut in_bin = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let run = sorted[i..].iter().take_while(|&&w| w == v).count();
        if in_bin >= need && sorted.len() - i >= need {
            edges.push(v);
            in_bin = 0;
        }
        in_bin += run;
        i += run;
    }
    edges
}

fn bin_of(edges: &[u64], v: u64) -> usize {
    edges.partition_point(|&e| e <= v) - 1
}

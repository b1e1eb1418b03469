//! One runner per experiment. Each returns its tables, snapshots and a JSON
//! summary; nothing touches the filesystem here.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use idla::cluster::{grow_from_origin, grow_in_order, grow_interleaved, three_wave_build, Cluster};
use idla::fluctuation::{
    deep_hole_sweep, deep_hole_wave_count, directional_sweep, inner_error, mean_visits_lower_trend, outer_error,
    scaling_fit, shape_sweep, tentacle_sweep, ErrorKind, FitModel, ScalingProfile,
};
use idla::geometry::{ball_count, Radius, Site};
use idla::harmonic::{hit_before_exit, hit_prob_far, joint_zero_probe, poisson_split_test, reflection_halves, Depth};
use idla::oracle::{cluster_distribution_exact, cluster_distribution_sampled, shape_key, tv_distance};
use idla::par::{map_replicas, replica_stream, tags, Execution, McConfig};
use idla::stats::{binomial_std_error, fit_through_origin, mean, std_error};
use idla::walk::InstructionStacks;

use crate::config::{Experiment, ExperimentConfig, Probe};
use crate::output::{flag, float, sha256_hex, Artifact, Table};
use crate::CliError;

pub const SHAPE_HEADER: &[&str] = &["replica", "n", "delta_inner", "delta_outer", "seed"];
pub const DIRECTIONAL_HEADER: &[&str] = &["replica", "n", "gap", "miss", "seed"];
pub const DEEP_HOLE_HEADER: &[&str] = &[
    "replica",
    "k",
    "R_k",
    "X_k",
    "lambda_k",
    "zk_norm",
    "event_A",
    "event_C",
    "event_I",
    "event_outer",
    "seed",
];
pub const HARMONIC_HEADER: &[&str] = &["grid_value", "estimate", "stderr", "replicas", "seed"];
pub const DEEP_HOLE_RUNS_HEADER: &[&str] = &[
    "replica",
    "n",
    "waves",
    "initial_size",
    "final_size",
    "conserved",
    "seed",
];
pub const TENTACLE_HEADER: &[&str] = &[
    "replica",
    "n",
    "lambda",
    "X",
    "x_within_bound",
    "settled_inside",
    "delta_inner",
    "threshold",
    "sources",
    "protruding_sources",
    "protrudes",
    "final_size",
    "R_n",
    "delta_outer_Rn",
    "h_Rn",
    "seed",
];
pub const ABELIAN_HEADER: &[&str] = &["replica", "build", "max_active", "sites", "digest", "identical", "seed"];
pub const ORACLE_HEADER: &[&str] = &["shape", "exact", "sampled", "replicas", "seed"];

/// Everything a run produces besides the manifest itself.
pub struct Outcome {
    pub tag: u32,
    pub artifacts: Vec<Artifact>,
    pub summary: Value,
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.experiment {
        Experiment::Grow => grow(cfg),
        Experiment::AbelianCheck => abelian_check(cfg),
        Experiment::Shape => shape(cfg),
        Experiment::Directional => directional(cfg),
        Experiment::Tentacle => tentacle(cfg),
        Experiment::DeepHole => deep_hole(cfg),
        Experiment::Harmonic => harmonic(cfg),
        Experiment::OracleCheck => oracle_check(cfg),
    }
}

fn mc(cfg: &ExperimentConfig) -> McConfig {
    McConfig::new(cfg.seed(), cfg.replicas)
        .with_exec(Execution::Parallel)
        .with_budget_factor(cfg.budget_factor)
}

fn required_n(cfg: &ExperimentConfig) -> u64 {
    cfg.n.expect("validated config carries n")
}

fn profile(cfg: &ExperimentConfig) -> Result<ScalingProfile, CliError> {
    Ok(ScalingProfile::new(cfg.alpha, cfg.beta, cfg.gamma)?)
}

fn sites_digest(cluster: &Cluster) -> String {
    let text: String = cluster
        .sites()
        .iter()
        .map(|s| {
            let mut line = s.coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
            line.push('\n');
            line
        })
        .collect();
    sha256_hex(text.as_bytes())
}

fn grow(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (dim, n, seed) = (cfg.dim, required_n(cfg), cfg.seed());
    let count = ball_count(dim, n as f64)?;
    let grown = mc(cfg).run(tags::GROW, |replica, mut rng| {
        let mut cluster = Cluster::with_radius(dim, n as f64)?;
        cluster.set_budget_factor(cfg.budget_factor);
        grow_from_origin(&mut cluster, count, &mut rng)?;
        let nf = n as f64;
        Ok((
            replica,
            inner_error(&cluster, nf),
            outer_error(&cluster, nf),
            cluster.len(),
            cluster.to_snapshot(seed),
        ))
    })?;
    let mut table = Table::new(SHAPE_HEADER);
    let mut artifacts = Vec::new();
    for (replica, inner, outer, len, snapshot) in &grown {
        table.push(vec![
            replica.to_string(),
            n.to_string(),
            float(*inner),
            float(*outer),
            seed.to_string(),
        ]);
        artifacts.push(Artifact {
            path: format!("snapshots/grow-r{replica:05}.txt"),
            bytes: snapshot.clone().into_bytes(),
            rows: *len,
        });
    }
    artifacts.insert(0, Artifact::table("grow.csv", &table));
    Ok(Outcome {
        tag: tags::GROW,
        artifacts,
        summary: json!({
            "particles": count,
            "all_conserved": grown.iter().all(|g| g.3 == count),
        }),
    })
}

fn abelian_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (dim, seed) = (cfg.dim, cfg.seed());
    let particles = cfg.particles.unwrap_or(500);
    let m = cfg.m.unwrap_or(particles * 3 / 5);
    if m > particles {
        return Err(CliError::Usage(format!(
            "m: must not exceed particles ({particles}), got {m}"
        )));
    }
    let radius = Radius::new(cfg.radius.unwrap_or(10.0))?;
    let origins = vec![Site::origin(dim); particles as usize];

    let mut reference = Cluster::new(dim)?;
    reference.set_budget_factor(cfg.budget_factor);
    grow_in_order(&mut reference, &origins, &mut InstructionStacks::new(seed))?;
    let reference_digest = sites_digest(&reference);

    let trials = map_replicas(Execution::Parallel, cfg.replicas, |replica| {
        let mut scheduler = replica_stream(seed, tags::ABELIAN, replica);
        let max_active = 1 + scheduler.below(particles.max(1)) as usize;
        let mut cluster = Cluster::new(dim)?;
        cluster.set_budget_factor(cfg.budget_factor);
        grow_interleaved(
            &mut cluster,
            &origins,
            &mut InstructionStacks::new(seed),
            &mut scheduler,
            max_active,
        )?;
        Ok((max_active, cluster.len(), sites_digest(&cluster)))
    })?;
    let waved = three_wave_build(dim, particles - m, m, radius, &mut InstructionStacks::new(seed))?;

    let mut table = Table::new(ABELIAN_HEADER);
    let mut row = |replica: u64, build: &str, max_active: String, len: u64, digest: &str| {
        table.push(vec![
            replica.to_string(),
            build.to_string(),
            max_active,
            len.to_string(),
            digest.to_string(),
            flag(digest == reference_digest),
            seed.to_string(),
        ]);
        digest == reference_digest
    };
    let mut all_identical = true;
    for (replica, (max_active, len, digest)) in trials.iter().enumerate() {
        all_identical &= row(replica as u64, "interleaved", max_active.to_string(), *len, digest);
    }
    all_identical &= row(
        cfg.replicas,
        "three-wave",
        String::new(),
        waved.len(),
        &sites_digest(&waved),
    );
    row(
        cfg.replicas + 1,
        "sequential",
        "1".into(),
        reference.len(),
        &reference_digest,
    );
    Ok(Outcome {
        tag: tags::ABELIAN,
        artifacts: vec![Artifact::table("abelian.csv", &table)],
        summary: json!({
            "particles": particles,
            "builds_compared": cfg.replicas + 1,
            "all_identical": all_identical,
            "reference_digest": reference_digest,
        }),
    })
}

fn shape(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let radii = if cfg.radii.is_empty() {
        vec![required_n(cfg)]
    } else {
        cfg.radii.clone()
    };
    let records = shape_sweep(cfg.dim, &radii, &mc(cfg))?;
    let mut table = Table::new(SHAPE_HEADER);
    for r in &records {
        table.push(vec![
            r.replica.to_string(),
            r.n.to_string(),
            float(r.delta_inner),
            float(r.delta_outer),
            r.seed.to_string(),
        ]);
    }
    let mut per_radius = Vec::new();
    for &n in &radii {
        let inner: Vec<f64> = records.iter().filter(|r| r.n == n).map(|r| r.delta_inner).collect();
        let outer: Vec<f64> = records.iter().filter(|r| r.n == n).map(|r| r.delta_outer).collect();
        per_radius.push(json!({
            "n": n,
            "mean_delta_inner": mean(&inner),
            "mean_delta_outer": mean(&outer),
            "max_delta_inner": inner.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            "max_delta_outer": outer.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }));
    }
    let mut summary = json!({ "radii": per_radius });
    if radii.len() >= 3 {
        let fit = scaling_fit(&records, ErrorKind::Inner, FitModel::SqrtLog)?;
        summary["inner_sqrt_log_fit"] = json!({ "alpha_hat": fit.alpha_hat, "stderr": fit.stderr });
    }
    Ok(Outcome {
        tag: tags::SHAPE,
        artifacts: vec![Artifact::table("shape.csv", &table)],
        summary,
    })
}

fn directional(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let gaps = if cfg.gaps.is_empty() {
        vec![1, 2, 3, 4]
    } else {
        cfg.gaps.clone()
    };
    let records = directional_sweep(cfg.dim, required_n(cfg), &gaps, &mc(cfg))?;
    let mut table = Table::new(DIRECTIONAL_HEADER);
    for r in &records {
        table.push(vec![
            r.replica.to_string(),
            r.n.to_string(),
            r.gap.to_string(),
            flag(r.miss),
            r.seed.to_string(),
        ]);
    }
    let per_gap: Vec<Value> = gaps
        .iter()
        .map(|&g| {
            let misses = records.iter().filter(|r| r.gap == g && r.miss).count() as u64;
            let p = misses as f64 / cfg.replicas as f64;
            json!({ "gap": g, "misses": misses, "miss_prob": p, "stderr": binomial_std_error(p, cfg.replicas) })
        })
        .collect();
    Ok(Outcome {
        tag: tags::DIRECTIONAL,
        artifacts: vec![Artifact::table("directional.csv", &table)],
        summary: json!({ "gaps": per_gap }),
    })
}

fn tentacle(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let reports = tentacle_sweep(cfg.dim, required_n(cfg), &profile(cfg)?, &mc(cfg))?;
    let mut table = Table::new(TENTACLE_HEADER);
    for r in &reports {
        table.push(vec![
            r.replica.to_string(),
            r.n.to_string(),
            float(r.lambda),
            r.x.to_string(),
            flag(r.x_within_bound),
            r.settled_inside.to_string(),
            float(r.delta_inner_first),
            float(r.threshold),
            r.sources.len().to_string(),
            r.sources.iter().filter(|s| s.protrudes).count().to_string(),
            flag(r.protrudes),
            r.final_size.to_string(),
            r.r_n.to_string(),
            float(r.delta_outer_rn),
            float(r.h_rn),
            r.seed.to_string(),
        ]);
    }
    let frac = |f: &dyn Fn(&idla::fluctuation::TentacleReport) -> bool| {
        reports.iter().filter(|r| f(r)).count() as f64 / reports.len() as f64
    };
    Ok(Outcome {
        tag: tags::TENTACLE,
        artifacts: vec![Artifact::table("tentacle.csv", &table)],
        summary: json!({
            "x_within_bound": frac(&|r| r.x_within_bound),
            "protrudes": frac(&|r| r.protrudes),
        }),
    })
}

fn deep_hole(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (n, seed) = (required_n(cfg), cfg.seed());
    let profile = profile(cfg)?;
    let expected_waves = deep_hole_wave_count(n, &profile)?;
    let runs = deep_hole_sweep(cfg.dim, n, &profile, &mc(cfg))?;
    let mut waves = Table::new(DEEP_HOLE_HEADER);
    let mut totals = Table::new(DEEP_HOLE_RUNS_HEADER);
    let mut per_wave: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let mut zk_violations = 0u64;
    for run in &runs {
        for r in &run.records {
            waves.push(vec![
                r.replica.to_string(),
                r.k.to_string(),
                r.r_k.to_string(),
                r.x_k.to_string(),
                float(r.lambda_k),
                float(r.zk_norm),
                flag(r.event_a),
                flag(r.event_c),
                flag(r.event_i),
                flag(r.event_outer),
                r.seed.to_string(),
            ]);
            let e = per_wave.entry(r.k).or_default();
            e.0 += 1;
            e.1 += u64::from(r.event_c);
            if !r.prev_event_a && !r.zk_bounds_ok {
                zk_violations += 1;
            }
        }
        totals.push(vec![
            run.replica.to_string(),
            run.n.to_string(),
            run.waves.to_string(),
            run.initial_size.to_string(),
            run.final_size.to_string(),
            flag(run.conserved()),
            seed.to_string(),
        ]);
    }
    let c_freq: Vec<Value> = per_wave
        .iter()
        .map(|(k, (runs, c))| json!({ "k": k, "event_c_frequency": *c as f64 / *runs as f64 }))
        .collect();
    Ok(Outcome {
        tag: tags::DEEP_HOLE,
        artifacts: vec![
            Artifact::table("deep-hole.csv", &waves),
            Artifact::table("deep-hole-runs.csv", &totals),
        ],
        summary: json!({
            "expected_waves": expected_waves,
            "all_waves_completed": runs.iter().all(|r| r.waves == expected_waves && r.records.len() as u64 == expected_waves),
            "all_conserved": runs.iter().all(|r| r.conserved()),
            "zk_violations_after_no_hole": zk_violations,
            "per_wave": c_freq,
        }),
    })
}

fn harmonic(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let seed = cfg.seed();
    let mc = mc(cfg);
    let mut table = Table::new(HARMONIC_HEADER);
    let mut push = |grid: f64, estimate: f64, stderr: f64, replicas: u64| {
        table.push(vec![
            float(grid),
            float(estimate),
            float(stderr),
            replicas.to_string(),
            seed.to_string(),
        ]);
    };
    let z = || Site::new(&cfg.z);
    let depth = cfg.depth.unwrap_or(2.0);
    let (tag, summary) = match cfg.probe {
        Probe::JointZero => {
            let radius = cfg.radius.expect("validated config carries radius");
            let fit = joint_zero_probe(&cfg.grid, z()?, radius, cfg.escape_factor, &mc)?;
            for p in &fit.points {
                push(p.lambda, p.p_hat, p.stderr, p.replicas);
            }
            let points: Vec<Value> = fit
                .points
                .iter()
                .map(|p| json!({ "lambda": p.lambda, "scaled": p.scaled, "zeros": p.zeros, "neg_log_p": p.neg_log_p }))
                .collect();
            let summary = json!({
                "bound": fit.name.as_str(),
                "kappa_hat": fit.fitted_constant,
                "stderr": fit.stderr,
                "r_squared": fit.r_squared,
                "band": [fit.band.0, fit.band.1],
                "points": points,
            });
            (tags::JOINT_ZERO, summary)
        }
        Probe::PoissonSplit => {
            let z = z()?;
            let (a, b) = reflection_halves(&z, 1)?;
            let mut reports = Vec::new();
            for &lambda in &cfg.grid {
                let rep = poisson_split_test(lambda, z, (&a, &b), (Depth::Finite(depth), Depth::Finite(depth)), &mc)?;
                let p = rep.independence.as_ref().map_or(f64::NAN, |t| t.p_value);
                push(lambda, p, f64::NAN, rep.replicas);
                reports.push(json!({
                    "lambda": lambda,
                    "means": rep.means,
                    "stderrs": rep.stderrs,
                    "dispersion": rep.dispersion,
                    "dispersion_sigma": rep.dispersion_sigma,
                    "chi_square": rep.independence.as_ref().map(|t| json!({ "statistic": t.statistic, "dof": t.dof, "p_value": t.p_value })),
                    "degenerate": rep.degenerate,
                }));
            }
            (tags::POISSON_SPLIT, json!({ "depth": depth, "reports": reports }))
        }
        Probe::HitFar | Probe::HitExit => {
            let z = z()?;
            let axis = if cfg.probe == Probe::HitFar { 0 } else { 1 };
            for &k in &cfg.grid {
                let offset = Site::on_axis(cfg.dim, axis, offset_of(k)?);
                let y = z.offset(&offset);
                let est = if cfg.probe == Probe::HitFar {
                    hit_prob_far(y, z, cfg.escape_factor, &mc)?
                } else {
                    hit_before_exit(y, z, depth, &mc)?
                };
                push(k, est.value, est.stderr, est.replicas);
            }
            let tag = if cfg.probe == Probe::HitFar {
                tags::HIT_FAR
            } else {
                tags::HIT_EXIT
            };
            (tag, json!({ "axis": axis }))
        }
        Probe::MeanVisits => {
            let gaps = cfg
                .grid
                .iter()
                .map(|&g| offset_of(g).map(|g| g as u64))
                .collect::<Result<Vec<_>, _>>()?;
            let means = mean_visits_lower_trend(cfg.dim, required_n(cfg), &gaps, &mc)?;
            for m in &means {
                push(m.gap as f64, m.mean, m.stderr, m.replicas);
            }
            (tags::MEAN_VISITS, visit_trend_summary(&means)?)
        }
    };
    Ok(Outcome {
        tag,
        artifacts: vec![Artifact::table("harmonic.csv", &table)],
        summary,
    })
}

fn offset_of(k: f64) -> Result<i32, CliError> {
    if !k.is_finite() || k.fract() != 0.0 || k.abs() >= 1e9 {
        return Err(CliError::Usage(format!("grid: expected integer offsets, got {k}")));
    }
    Ok(k as i32)
}

/// Through-origin slope of mean visits against gap. The lower bound combines
/// the Monte Carlo error of the means with the misfit of the line.
fn visit_trend_summary(means: &[idla::fluctuation::VisitMean]) -> Result<Value, CliError> {
    let nondecreasing = means.windows(2).all(|w| w[1].mean >= w[0].mean);
    let mut summary = json!({ "nondecreasing": nondecreasing });
    let positive: Vec<_> = means.iter().filter(|m| m.gap > 0).collect();
    if positive.len() >= 2 {
        let xs: Vec<f64> = positive.iter().map(|m| m.gap as f64).collect();
        let ys: Vec<f64> = positive.iter().map(|m| m.mean).collect();
        let fit = fit_through_origin(&xs, &ys)?;
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let mc_var: f64 = positive
            .iter()
            .map(|m| (m.gap as f64).powi(2) * m.stderr.powi(2))
            .sum::<f64>()
            / (sxx * sxx);
        let stderr = (mc_var + fit.stderr.powi(2)).sqrt();
        summary["slope"] = json!(fit.slope);
        summary["slope_stderr"] = json!(stderr);
        summary["slope_lower_95"] = json!(fit.slope - 1.96 * stderr);
    }
    Ok(summary)
}

fn oracle_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let k = cfg.k.unwrap_or(3);
    let exact = cluster_distribution_exact(k, cfg.dim)?;
    let sampled = cluster_distribution_sampled(k, cfg.dim, &mc(cfg))?;
    let tv = tv_distance(&exact, &sampled);
    let mut table = Table::new(ORACLE_HEADER);
    let shapes: std::collections::BTreeSet<_> = exact.probs.keys().chain(sampled.probs.keys()).collect();
    for shape in shapes {
        table.push(vec![
            shape_key(shape),
            float(exact.get(shape)),
            float(sampled.get(shape)),
            cfg.replicas.to_string(),
            cfg.seed().to_string(),
        ]);
    }
    let unexpected = sampled.probs.keys().filter(|s| !exact.probs.contains_key(*s)).count();
    Ok(Outcome {
        tag: tags::ORACLE,
        artifacts: vec![Artifact::table("oracle.csv", &table)],
        summary: json!({
            "k": k,
            "shapes": exact.probs.len(),
            "tv_distance": tv,
            "shapes_outside_support": unexpected,
        }),
    })
}

/// Mean and standard error over replicas, with NaN error for a single value.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    (mean(xs), if xs.len() > 1 { std_error(xs) } else { f64::NAN })
}

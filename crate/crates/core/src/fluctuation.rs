//! Fluctuations of the cluster around the ball: inner and outer errors,
//! directional coverage, and the multi-wave tentacle and deep-hole
//! experiments.

use std::collections::BTreeMap;

use crate::cluster::{grow_from_origin, poisson_sample, stop_wave, wave_run, Cluster, ParticleConfig};
use crate::error::{IdlaError, Result};
use crate::geometry::{ball_count, check_dim, rho, BallSpec, Radius, Site};
use crate::par::{tags, McConfig};
use crate::stats::{fit_through_origin, mean, std_error};
use crate::walk::{hit_before_leaving_ball, RngStream, StepBudget};

/// Errors of one cluster at nominal radius `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRecord {
    pub replica: u64,
    pub n: u64,
    pub delta_inner: f64,
    pub delta_outer: f64,
    pub seed: u64,
}

/// `n − min{‖z‖ : z ∉ cluster}`.
pub fn inner_error(cluster: &Cluster, n: f64) -> f64 {
    n - (cluster.min_unoccupied_norm2() as f64).sqrt()
}

/// `max{‖z‖ : z ∈ cluster} − n`; `−∞` for the empty cluster.
pub fn outer_error(cluster: &Cluster, n: f64) -> f64 {
    match cluster.max_occupied_norm2() {
        Some(m) => (m as f64).sqrt() - n,
        None => f64::NEG_INFINITY,
    }
}

/// Whether `z` is left unoccupied.
pub fn directional_miss(cluster: &Cluster, z: &Site) -> bool {
    !cluster.contains(z)
}

/// Length scales `h`, `L̄`, `L` of the wave experiments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingProfile {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Use `h(n) = α·√(log n · log log n)`.
    pub d2_variant: bool,
}

fn sqrt_log(n: f64) -> f64 {
    n.ln().max(0.0).sqrt()
}

impl ScalingProfile {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<ScalingProfile> {
        let p = ScalingProfile {
            alpha,
            beta,
            gamma,
            d2_variant: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(IdlaError::domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn h(&self, n: f64) -> f64 {
        if self.d2_variant {
            let l = n.ln().max(0.0);
            self.alpha * (l * l.ln().max(0.0)).sqrt()
        } else {
            self.alpha * sqrt_log(n)
        }
    }

    pub fn lbar(&self, n: f64) -> f64 {
        self.beta * sqrt_log(n)
    }

    pub fn l(&self, n: f64) -> f64 {
        self.gamma * sqrt_log(n)
    }
}

/// Shell widths `h_i = R / (i·log R)`, `i = 1..=R`.
pub fn telescope_widths(r: u64) -> Result<Vec<f64>> {
    if r < 2 {
        return Err(IdlaError::domain("telescope needs R >= 2"));
    }
    let log_r = (r as f64).ln();
    Ok((1..=r).map(|i| r as f64 / (i as f64 * log_r)).collect())
}

fn sorted_radii(radii: &[u64]) -> Result<Vec<u64>> {
    let mut v = radii.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.is_empty() || v[0] == 0 {
        return Err(IdlaError::domain("radii must be a nonempty list of positive integers"));
    }
    Ok(v)
}

/// Grows `b(n)` origin explorers per replica and records both errors at
/// every listed radius. Radii are reached in increasing order by one growth
/// per replica, so the records of a replica are nested clusters.
pub fn shape_sweep(dim: usize, radii: &[u64], mc: &McConfig) -> Result<Vec<ErrorRecord>> {
    check_dim(dim)?;
    let radii = sorted_radii(radii)?;
    let targets: Vec<u64> = radii
        .iter()
        .map(|&n| ball_count(dim, n as f64))
        .collect::<Result<_>>()?;
    let largest = *radii.last().unwrap() as f64;
    let seed = mc.seed;
    let per_replica = mc.run(tags::SHAPE, |replica, mut rng| {
        let mut cluster = Cluster::with_radius(dim, largest)?;
        cluster.set_budget_factor(mc.budget_factor);
        let mut out = Vec::with_capacity(radii.len());
        for (&n, &target) in radii.iter().zip(&targets) {
            let missing = target - cluster.particle_count();
            grow_from_origin(&mut cluster, missing, &mut rng)?;
            out.push(ErrorRecord {
                replica,
                n,
                delta_inner: inner_error(&cluster, n as f64),
                delta_outer: outer_error(&cluster, n as f64),
                seed,
            });
        }
        Ok(out)
    })?;
    Ok(per_replica.into_iter().flatten().collect())
}

/// Coverage of `z = (n − gap, 0, …)` by a `b(n)`-explorer cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DirectionalRecord {
    pub replica: u64,
    pub n: u64,
    pub gap: u64,
    pub miss: bool,
    pub seed: u64,
}

fn axis_site(dim: usize, n: u64, gap: u64) -> Result<Site> {
    if gap > n {
        return Err(IdlaError::domain(format!("gap {gap} exceeds radius {n}")));
    }
    let t = i32::try_from(n - gap).map_err(|_| IdlaError::capacity("radius exceeds i32"))?;
    Ok(Site::on_axis(dim, 0, t))
}

/// One `b(n)` cluster per replica, probed at every gap.
pub fn directional_sweep(dim: usize, n: u64, gaps: &[u64], mc: &McConfig) -> Result<Vec<DirectionalRecord>> {
    check_dim(dim)?;
    let probes: Vec<(u64, Site)> = gaps
        .iter()
        .map(|&g| axis_site(dim, n, g).map(|z| (g, z)))
        .collect::<Result<_>>()?;
    let count = ball_count(dim, n as f64)?;
    let seed = mc.seed;
    let per_replica = mc.run(tags::DIRECTIONAL, |replica, mut rng| {
        let mut cluster = Cluster::with_radius(dim, n as f64)?;
        cluster.set_budget_factor(mc.budget_factor);
        grow_from_origin(&mut cluster, count, &mut rng)?;
        Ok(probes
            .iter()
            .map(|&(gap, z)| DirectionalRecord {
                replica,
                n,
                gap,
                miss: directional_miss(&cluster, &z),
                seed,
            })
            .collect::<Vec<_>>())
    })?;
    Ok(per_replica.into_iter().flatten().collect())
}

/// Mean explorer visits at one site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisitMean {
    pub gap: u64,
    pub mean: f64,
    pub stderr: f64,
    pub replicas: u64,
}

/// For each gap, `z = (n − gap, 0, …)` and a single wave of `b(n)` origin
/// explorers on an empty cluster stopped at radius `‖z‖`: the mean number
/// of explorers stopped at `z`.
pub fn mean_visits_lower_trend(dim: usize, n: u64, gaps: &[u64], mc: &McConfig) -> Result<Vec<VisitMean>> {
    check_dim(dim)?;
    if mc.replicas == 0 {
        return Err(IdlaError::domain("mean visits need at least one replica"));
    }
    let probes: Vec<(u64, Site)> = gaps
        .iter()
        .map(|&g| axis_site(dim, n, g).map(|z| (g, z)))
        .collect::<Result<_>>()?;
    let starts = ParticleConfig::point(Site::origin(dim), ball_count(dim, n as f64)?);
    let samples = mc.run(tags::MEAN_VISITS, |_, rng| {
        probes
            .iter()
            .enumerate()
            .map(|(i, (_, z))| {
                let mut walk = rng.derive(2 * i as u64);
                let mut continuation = rng.derive(2 * i as u64 + 1);
                let mut cluster = Cluster::with_radius(dim, n as f64)?;
                cluster.set_budget_factor(mc.budget_factor);
                let out = wave_run(&mut cluster, &starts, Radius::norm_of(z), &mut walk, &mut continuation)?;
                Ok(out.visits_at(z) as f64)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(probes
        .iter()
        .enumerate()
        .map(|(i, &(gap, _))| {
            let column: Vec<f64> = samples.iter().map(|row| row[i]).collect();
            VisitMean {
                gap,
                mean: mean(&column),
                stderr: if column.len() > 1 { std_error(&column) } else { f64::NAN },
                replicas: column.len() as u64,
            }
        })
        .collect())
}

/// A source of the tentacle wave and whether the cluster protrudes near it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TentacleSource {
    pub site: Site,
    pub count: u64,
    pub protrudes: bool,
}

/// One run of the three-wave tentacle protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct TentacleReport {
    pub replica: u64,
    pub seed: u64,
    pub n: u64,
    pub lambda: f64,
    pub x: u64,
    pub x_within_bound: bool,
    /// Green explorers that settled before reaching the stopping sphere.
    pub settled_inside: u64,
    /// Inner error of the first wave at radius `n`.
    pub delta_inner_first: f64,
    /// Protrusion threshold `n + 4h(n)`.
    pub threshold: f64,
    pub sources: Vec<TentacleSource>,
    /// Some occupied site has norm `>= threshold`.
    pub protrudes: bool,
    pub final_size: u64,
    pub r_n: u64,
    pub delta_outer_rn: f64,
    pub h_rn: f64,
}

/// Three waves: `b(n)` origin explorers; `X ~ Poisson(|𝔹(0,n+h)∖𝔹(0,n)|)`
/// green explorers stopped on `∂𝔹(0, n − L(n))`; their release. A source
/// `z` counts as protruding when an occupied site beyond the threshold lies
/// within `2(4h(n) + L(n)) + 1` of it.
pub fn tentacle_experiment(
    dim: usize,
    n: u64,
    profile: &ScalingProfile,
    rng: &mut RngStream,
    budget_factor: f64,
) -> Result<TentacleReport> {
    check_dim(dim)?;
    profile.validate()?;
    if n < 10 {
        return Err(IdlaError::domain("tentacle experiment needs n >= 10"));
    }
    let nf = n as f64;
    let h = profile.h(nf);
    let l = profile.l(nf);
    let stop_radius = nf - l;
    if !(stop_radius > 0.0) {
        return Err(IdlaError::domain(format!(
            "stopping radius n − L(n) = {stop_radius} is not positive"
        )));
    }
    let base = ball_count(dim, nf)?;
    let lambda = (ball_count(dim, nf + h)? - base) as f64;
    let threshold = nf + 4.0 * h;

    let mut cluster = Cluster::with_radius(dim, threshold + 2.0)?;
    cluster.set_budget_factor(budget_factor);
    grow_from_origin(&mut cluster, base, rng)?;
    let delta_inner_first = inner_error(&cluster, nf);

    let x = poisson_sample(lambda, rng)?;
    let green = ParticleConfig::point(Site::origin(dim), x);
    let wave = stop_wave(&mut cluster, &green, Radius::new(stop_radius)?, rng)?;
    crate::cluster::grow_sequential(&mut cluster, &wave.stopped, rng)?;

    let far: Vec<Site> = cluster.sites().into_iter().filter(|s| s.norm() >= threshold).collect();
    let reach = 2.0 * (4.0 * h + l) + 1.0;
    let sources = wave
        .stopped
        .iter()
        .map(|(site, count)| TentacleSource {
            site,
            count,
            protrudes: far.iter().any(|y| (y.dist2(&site) as f64).sqrt() <= reach),
        })
        .collect();
    let final_size = cluster.len();
    let r_n = rho(dim, final_size as f64)?;
    Ok(TentacleReport {
        replica: 0,
        seed: rng.seed(),
        n,
        lambda,
        x,
        x_within_bound: x as f64 <= 2.0 * lambda,
        settled_inside: wave.settled.len() as u64,
        delta_inner_first,
        threshold,
        sources,
        protrudes: !far.is_empty(),
        final_size,
        r_n,
        delta_outer_rn: outer_error(&cluster, r_n as f64),
        h_rn: profile.h(r_n as f64),
    })
}

/// [`tentacle_experiment`] over replicas.
pub fn tentacle_sweep(dim: usize, n: u64, profile: &ScalingProfile, mc: &McConfig) -> Result<Vec<TentacleReport>> {
    mc.run(tags::TENTACLE, |replica, mut rng| {
        let mut report = tentacle_experiment(dim, n, profile, &mut rng, mc.budget_factor)?;
        report.replica = replica;
        Ok(report)
    })
}

/// One wave `k >= 1` of the deep-hole protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeepHoleRecord {
    pub replica: u64,
    pub seed: u64,
    pub k: u64,
    pub r_prev: u64,
    pub r_k: u64,
    pub x_k: u64,
    pub lambda_k: f64,
    pub z_k: Site,
    pub zk_norm: f64,
    /// `δ_I(R_k) > h(R_k)`.
    pub event_a: bool,
    /// `event_a` of the previous wave (wave 0 is the initial growth).
    pub prev_event_a: bool,
    /// `(2/3)λ(k) <= X_k <= 2λ(k)`.
    pub event_c: bool,
    /// No green walk hit `Z_k`.
    pub event_i: bool,
    /// `δ_O(R_k) >= L̄(R_k)`.
    pub event_outer: bool,
    /// `R_{k−1} − h(R_{k−1}) <= ‖Z_k‖ <= R_{k−1} + 1`.
    pub zk_bounds_ok: bool,
    pub cap_hits: u64,
    pub complement_hits: u64,
}

/// All waves of one deep-hole run.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepHoleRun {
    pub replica: u64,
    pub n: u64,
    pub waves: u64,
    pub initial_size: u64,
    pub final_size: u64,
    pub records: Vec<DeepHoleRecord>,
}

impl DeepHoleRun {
    /// `b(n) + Σ X_k` equals the final size.
    pub fn conserved(&self) -> bool {
        self.initial_size + self.records.iter().map(|r| r.x_k).sum::<u64>() == self.final_size
    }
}

/// Number of waves `⌊n / (2h(n))⌋`.
pub fn deep_hole_wave_count(n: u64, profile: &ScalingProfile) -> Result<u64> {
    let h = profile.h(n as f64);
    if !(h > 0.0) {
        return Err(IdlaError::domain("deep-hole waves need h(n) > 0"));
    }
    Ok((n as f64 / (2.0 * h)).floor() as u64)
}

/// The deep-hole protocol: `b(n)` origin explorers, then waves
/// `k = 1..=⌊n/(2h(n))⌋`. Wave `k` draws `X_k ~ Poisson(λ(k))` with
/// `λ(k) = |𝔹(0, R_{k−1} + 2h(R_{k−1})) ∖ 𝔹(0, R_{k−1})|`, picks the
/// unoccupied site `Z_k` of least norm, stops the green explorers on
/// `Σ(Z_k)` and releases them. Before release, a free walk coupled to each
/// green explorer checks whether it would hit `Z_k` before leaving
/// `𝔹(0, ‖Z_k‖ + 7L̄(R_{k−1}))`; hits are split by whether the stopping site
/// lies in the cap `𝔹(Z_k, L̄(R_k)) ∩ Σ(Z_k)`.
pub fn deep_hole_experiment(
    dim: usize,
    n: u64,
    profile: &ScalingProfile,
    rng: &mut RngStream,
    budget_factor: f64,
) -> Result<DeepHoleRun> {
    check_dim(dim)?;
    profile.validate()?;
    if n < 10 {
        return Err(IdlaError::domain("deep-hole experiment needs n >= 10"));
    }
    if profile.beta < profile.alpha {
        return Err(IdlaError::domain("deep-hole experiment needs beta >= alpha"));
    }
    let waves = deep_hole_wave_count(n, profile)?;
    let origin = Site::origin(dim);
    let initial_size = ball_count(dim, n as f64)?;

    let mut cluster = Cluster::with_radius(dim, 2.0 * n as f64 + 2.0)?;
    cluster.set_budget_factor(budget_factor);
    grow_from_origin(&mut cluster, initial_size, rng)?;

    let mut total = initial_size;
    let mut r_prev = n;
    let mut prev_event_a = inner_error(&cluster, n as f64) > profile.h(n as f64);
    let mut records = Vec::with_capacity(waves as usize);
    for k in 1..=waves {
        let rp = r_prev as f64;
        let h_prev = profile.h(rp);
        let lambda = (ball_count(dim, rp + 2.0 * h_prev)? - ball_count(dim, rp)?) as f64;
        let x = poisson_sample(lambda, rng)?;
        total += x;
        let r_k = rho(dim, total as f64)?;

        let z = cluster.min_unoccupied();
        let zk_norm = z.norm();
        let sigma = Radius::norm_of(&z);
        let cap = BallSpec::new(z, profile.lbar(r_k as f64))?;
        let probe_ball = BallSpec::new(origin, zk_norm + 7.0 * profile.lbar(rp))?;
        let probe_budget = StepBudget::for_radius(budget_factor, probe_ball.radius.value());

        let wave_stream = rng.derive(k);
        let mut stopped = Vec::with_capacity(x as usize);
        let (mut cap_hits, mut complement_hits) = (0u64, 0u64);
        for j in 0..x {
            let mut walker = wave_stream.derive(j);
            let one = ParticleConfig::point(origin, 1);
            let wave = stop_wave(&mut cluster, &one, sigma, &mut walker)?;
            let Some((y, _)) = wave.stopped.iter().next() else {
                // only possible if Z_k lost its minimality, which would be a bug
                return Err(IdlaError::Numeric(format!("green explorer settled inside Σ({z})")));
            };
            let mut probe = walker.clone();
            if hit_before_leaving_ball(y, z, &probe_ball, &mut probe, probe_budget)?.is_hit() {
                if cap.contains(&y) {
                    cap_hits += 1;
                } else {
                    complement_hits += 1;
                }
            }
            stopped.push((y, j, walker));
        }
        stopped.sort_by_key(|(y, j, _)| (*y, *j));
        for (y, _, mut walker) in stopped {
            cluster.grow_from(y, &mut walker)?;
        }

        let rk = r_k as f64;
        let event_a = inner_error(&cluster, rk) > profile.h(rk);
        records.push(DeepHoleRecord {
            replica: 0,
            seed: rng.seed(),
            k,
            r_prev,
            r_k,
            x_k: x,
            lambda_k: lambda,
            z_k: z,
            zk_norm,
            event_a,
            prev_event_a,
            event_c: 2.0 * lambda / 3.0 <= x as f64 && x as f64 <= 2.0 * lambda,
            event_i: cap_hits + complement_hits == 0,
            event_outer: outer_error(&cluster, rk) >= profile.lbar(rk),
            zk_bounds_ok: rp - h_prev <= zk_norm && zk_norm <= rp + 1.0,
            cap_hits,
            complement_hits,
        });
        prev_event_a = event_a;
        r_prev = r_k;
    }
    Ok(DeepHoleRun {
        replica: 0,
        n,
        waves,
        initial_size,
        final_size: cluster.len(),
        records,
    })
}

/// [`deep_hole_experiment`] over replicas.
pub fn deep_hole_sweep(dim: usize, n: u64, profile: &ScalingProfile, mc: &McConfig) -> Result<Vec<DeepHoleRun>> {
    mc.run(tags::DEEP_HOLE, |replica, mut rng| {
        let mut run = deep_hole_experiment(dim, n, profile, &mut rng, mc.budget_factor)?;
        run.replica = replica;
        for r in &mut run.records {
            r.replica = replica;
        }
        Ok(run)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Inner,
    Outer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitModel {
    /// `δ ≈ α̂·√log n`.
    SqrtLog,
    /// `δ ≈ α̂·log n`.
    Log,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFit {
    pub alpha_hat: f64,
    pub stderr: f64,
    /// `(n, mean δ)` per radius.
    pub means: Vec<(u64, f64)>,
}

/// Least-squares slope, through the origin, of the per-radius mean error
/// against `√log n` or `log n`.
pub fn scaling_fit(records: &[ErrorRecord], kind: ErrorKind, model: FitModel) -> Result<ScalingFit> {
    let mut by_n: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        let v = match kind {
            ErrorKind::Inner => r.delta_inner,
            ErrorKind::Outer => r.delta_outer,
        };
        by_n.entry(r.n).or_default().push(v);
    }
    if by_n.len() < 3 {
        return Err(IdlaError::domain(format!(
            "scaling fit needs at least 3 radii, got {}",
            by_n.len()
        )));
    }
    let means: Vec<(u64, f64)> = by_n.iter().map(|(&n, v)| (n, mean(v))).collect();
    let xs: Vec<f64> = means
        .iter()
        .map(|&(n, _)| match model {
            FitModel::SqrtLog => sqrt_log(n as f64),
            FitModel::Log => (n as f64).ln(),
        })
        .collect();
    let ys: Vec<f64> = means.iter().map(|&(_, m)| m).collect();
    let fit = fit_through_origin(&xs, &ys)?;
    Ok(ScalingFit {
        alpha_hat: fit.slope,
        stderr: fit.stderr,
        means,
    })
}

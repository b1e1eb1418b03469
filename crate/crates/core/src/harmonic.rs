//! Monte Carlo estimators for walks that first hit the sphere shell
//! `Σ(z)`, the outer boundary of `𝔹(0, ‖z‖)`, and then visit `z` before
//! leaving a larger ball.

use std::collections::{BTreeMap, BTreeSet};

use crate::cluster::{poisson_sample, ParticleConfig};
use crate::error::{IdlaError, Result};
use crate::geometry::{cap_and_complement, sphere_shell, BallSpec, Radius, Site};
use crate::par::{tags, McConfig};
use crate::stats::{
    binomial_std_error, chi_square_independence, dispersion_index, dispersion_sigma, fit_through_origin, mean,
    std_error, ChiSquareTest,
};
use crate::walk::{exit_origin_ball, hit_before_leaving_ball, RngStream, StepBudget};

/// How far a walk may wander after hitting `Σ(z)` while looking for `z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Depth {
    /// Until it leaves `𝔹(0, ‖z‖ + h)`.
    Finite(f64),
    /// Until it hits `z`, or until it is `escape_factor · max(‖y − z‖, 1)`
    /// away from `z`, where `y` is the hitting site. Transient lattices only.
    Unbounded { escape_factor: f64 },
}

impl Depth {
    fn check(&self, dim: usize) -> Result<()> {
        match *self {
            Depth::Finite(h) if !(h > 0.0) || !h.is_finite() => {
                Err(IdlaError::domain(format!("depth must be positive and finite, got {h}")))
            }
            Depth::Unbounded { .. } if dim < 3 => Err(IdlaError::domain(
                "unbounded depth needs d >= 3; the walk is recurrent in d = 2",
            )),
            Depth::Unbounded { escape_factor } if !(escape_factor >= 1.0) => Err(IdlaError::domain(format!(
                "escape factor must be >= 1, got {escape_factor}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Point estimate of a probability or mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub replicas: u64,
}

fn in_shell(site: &Site, radius: Radius) -> bool {
    !radius.holds(site.norm2()) && site.neighbors().any(|n| radius.holds(n.norm2()))
}

fn check_target(z: &Site) -> Result<()> {
    if z.is_origin() {
        return Err(IdlaError::domain("target must differ from the origin"));
    }
    Ok(())
}

/// Shared geometry of one target `z`.
#[derive(Clone, Debug)]
struct Target {
    z: Site,
    radius: Radius,
    budget_factor: f64,
}

impl Target {
    fn new(z: Site, budget_factor: f64) -> Result<Target> {
        check_target(&z)?;
        Ok(Target {
            z,
            radius: Radius::norm_of(&z),
            budget_factor,
        })
    }

    /// First site of `Σ(z)` visited from `start`.
    fn first_hit(&self, start: Site, rng: &mut RngStream) -> Result<Site> {
        if self.radius.holds(start.norm2()) {
            let budget = StepBudget::for_radius(self.budget_factor, self.radius.value());
            Ok(exit_origin_ball(start, self.radius, rng, budget)?.0)
        } else if in_shell(&start, self.radius) {
            Ok(start)
        } else {
            Err(IdlaError::domain(format!("start {start} lies beyond Σ({})", self.z)))
        }
    }

    /// Whether a walk from `y` reaches `z` within `depth`.
    fn reaches(&self, y: Site, depth: Depth, rng: &mut RngStream) -> Result<bool> {
        let ball = match depth {
            Depth::Finite(h) => BallSpec::new(Site::origin(self.z.dim()), self.radius.value() + h)?,
            Depth::Unbounded { escape_factor } => {
                let d = (y.dist2(&self.z) as f64).sqrt().max(1.0);
                BallSpec::new(self.z, escape_factor * d)?
            }
        };
        let reach = match depth {
            Depth::Finite(_) => ball.radius.value(),
            Depth::Unbounded { .. } => ball.radius.value() + self.radius.value(),
        };
        let budget = StepBudget::for_radius(self.budget_factor, reach);
        Ok(hit_before_leaving_ball(y, self.z, &ball, rng, budget)?.is_hit())
    }
}

/// `N_z` for one batch of walks.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicCount {
    pub z: Site,
    pub region: BTreeSet<Site>,
    pub depth: Depth,
    pub count: u64,
    pub walkers: u64,
}

fn check_region(z: &Site, region: &BTreeSet<Site>) -> Result<()> {
    if region.is_empty() {
        return Ok(());
    }
    let shell = sphere_shell(z)?;
    if let Some(bad) = region.iter().find(|s| !shell.contains(s)) {
        return Err(IdlaError::domain(format!("region site {bad} is not in Σ({z})")));
    }
    Ok(())
}

/// Launches one independent walk per particle of `eta` and counts those whose
/// first visit to `Σ(z)` lies in `region` and that then reach `z` within
/// `depth`. Particles must start inside `𝔹(0, ‖z‖)` or on `Σ(z)`.
pub fn count_nz(
    eta: &ParticleConfig,
    z: Site,
    region: &BTreeSet<Site>,
    depth: Depth,
    rng: &mut RngStream,
    budget_factor: f64,
) -> Result<HarmonicCount> {
    depth.check(z.dim())?;
    check_region(&z, region)?;
    let target = Target::new(z, budget_factor)?;
    let mut count = 0;
    let mut walkers = 0;
    for (i, start) in eta.launch_order().enumerate() {
        walkers += 1;
        let mut walk = rng.derive(i as u64);
        let y = target.first_hit(start, &mut walk)?;
        if region.contains(&y) && target.reaches(y, depth, &mut walk)? {
            count += 1;
        }
    }
    Ok(HarmonicCount {
        z,
        region: region.clone(),
        depth,
        count,
        walkers,
    })
}

/// Empirical hitting distribution of `Σ(z)` from the origin.
pub fn shell_hit_distribution(z: Site, mc: &McConfig) -> Result<BTreeMap<Site, f64>> {
    let target = Target::new(z, mc.budget_factor)?;
    let hits = mc.run(tags::NZ_COUNT, |_, mut rng| {
        target.first_hit(Site::origin(z.dim()), &mut rng)
    })?;
    let mut out = BTreeMap::new();
    let w = 1.0 / mc.replicas as f64;
    for y in hits {
        *out.entry(y).or_insert(0.0) += w;
    }
    Ok(out)
}

/// Expected `N_z` for `walkers` origin walks as the sum over `y ∈ region` of
/// the hitting probability of `y` times the probability of reaching `z` from
/// `y`. Both factors are estimated: the first with `mc.replicas` walks, the
/// second with `mc.replicas` walks from every hit site of `region`.
pub fn nz_mean_two_factor(
    walkers: f64,
    z: Site,
    region: &BTreeSet<Site>,
    depth: Depth,
    mc: &McConfig,
) -> Result<Estimate> {
    depth.check(z.dim())?;
    check_region(&z, region)?;
    let target = Target::new(z, mc.budget_factor)?;
    let harmonic = shell_hit_distribution(z, mc)?;
    let n = mc.replicas as f64;
    let mut value = 0.0;
    let mut var = 0.0;
    for (i, (y, &p_hit)) in harmonic.iter().filter(|(y, _)| region.contains(y)).enumerate() {
        let seeded = McConfig {
            seed: mc.seed ^ (0x5eed_0000 + i as u64),
            ..*mc
        };
        let reached = seeded.run(tags::HIT_EXIT, |_, mut rng| target.reaches(*y, depth, &mut rng))?;
        let p_reach = reached.iter().filter(|&&b| b).count() as f64 / n;
        value += p_hit * p_reach;
        var += p_reach * p_reach * p_hit * (1.0 - p_hit) / n + p_hit * p_hit * p_reach * (1.0 - p_reach) / n;
    }
    Ok(Estimate {
        value: walkers * value,
        stderr: walkers * var.sqrt(),
        replicas: mc.replicas,
    })
}

/// Dispersion and independence diagnostics for two `N_z` counts.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonSplitReport {
    pub lambda: f64,
    pub replicas: u64,
    pub means: [f64; 2],
    pub stderrs: [f64; 2],
    /// Variance-to-mean ratio per margin.
    pub dispersion: [f64; 2],
    /// Sampling standard deviation of a Poisson dispersion index.
    pub dispersion_sigma: f64,
    pub independence: Option<ChiSquareTest>,
    /// A margin is constant, so the tests carry no information.
    pub degenerate: bool,
    pub pairs: Vec<(u64, u64)>,
}

/// Draws `X ~ Poisson(lambda)` origin walks per replica and records the pair
/// `(N_z(Λ, h), N_z(Λ', h'))`.
pub fn poisson_split_test(
    lambda: f64,
    z: Site,
    partition: (&BTreeSet<Site>, &BTreeSet<Site>),
    depths: (Depth, Depth),
    mc: &McConfig,
) -> Result<PoissonSplitReport> {
    let (first, second) = partition;
    if let Some(s) = first.intersection(second).next() {
        return Err(IdlaError::domain(format!("partition blocks share {s}")));
    }
    depths.0.check(z.dim())?;
    depths.1.check(z.dim())?;
    check_region(&z, first)?;
    check_region(&z, second)?;
    let target = Target::new(z, mc.budget_factor)?;
    let origin = Site::origin(z.dim());
    let pairs = mc.run(tags::POISSON_SPLIT, |_, mut rng| {
        let x = poisson_sample(lambda, &mut rng)?;
        let mut pair = (0u64, 0u64);
        for i in 0..x {
            let mut walk = rng.derive(i);
            let y = target.first_hit(origin, &mut walk)?;
            if first.contains(&y) {
                pair.0 += target.reaches(y, depths.0, &mut walk)? as u64;
            } else if second.contains(&y) {
                pair.1 += target.reaches(y, depths.1, &mut walk)? as u64;
            }
        }
        Ok(pair)
    })?;
    let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
    let constant = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
    let degenerate = pairs.len() < 2 || constant(&a) || constant(&b);
    let independence = if degenerate {
        None
    } else {
        match chi_square_independence(&pairs, 0.1) {
            Ok(t) => Some(t),
            Err(IdlaError::InsufficientResolution(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(PoissonSplitReport {
        lambda,
        replicas: mc.replicas,
        means: [mean(&a), mean(&b)],
        stderrs: [std_error(&a), std_error(&b)],
        dispersion: [dispersion_index(&a), dispersion_index(&b)],
        dispersion_sigma: dispersion_sigma(pairs.len()),
        degenerate: degenerate || independence.is_none(),
        independence,
        pairs,
    })
}

/// The two halves of `Σ(z)` with positive and negative coordinate `axis`.
pub fn reflection_halves(z: &Site, axis: usize) -> Result<(BTreeSet<Site>, BTreeSet<Site>)> {
    if axis >= z.dim() || z.coord(axis) != 0 {
        return Err(IdlaError::domain(format!(
            "reflection across axis {axis} does not fix {z}"
        )));
    }
    let shell = sphere_shell(z)?;
    let upper = shell.iter().filter(|s| s.coord(axis) > 0).copied().collect();
    let lower = shell.iter().filter(|s| s.coord(axis) < 0).copied().collect();
    Ok((upper, lower))
}

/// Which fitted quantity a [`BoundFit`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundName {
    Green,
    Exit,
    JointZero,
}

impl BoundName {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundName::Green => "green",
            BoundName::Exit => "exit",
            BoundName::JointZero => "joint-zero",
        }
    }
}

/// One grid point of [`joint_zero_probe`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeroProbePoint {
    pub lambda: f64,
    /// `λ·R / ‖z‖^{d−1}`.
    pub scaled: f64,
    pub zeros: u64,
    pub replicas: u64,
    pub p_hat: f64,
    pub stderr: f64,
    pub neg_log_p: f64,
}

/// Empirical constant of an exponential bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundFit {
    pub name: BoundName,
    pub fitted_constant: f64,
    pub stderr: f64,
    pub r_squared: f64,
    pub sample_size: u64,
    /// 95% normal band on the constant.
    pub band: (f64, f64),
    pub points: Vec<ZeroProbePoint>,
}

/// For each `λ`, the frequency of `N_z(Λ, ∞) = 0` and `N_z(Λ', R) = 0` with
/// `Λ = 𝔹(z, R) ∩ Σ(z)` and `Λ' = Σ(z) ∖ Λ`, for `X ~ Poisson(λ)` origin
/// walks; then the least-squares slope of `−log P̂` against `λR/‖z‖^{d−1}`
/// through the origin.
pub fn joint_zero_probe(lambdas: &[f64], z: Site, r: f64, escape_factor: f64, mc: &McConfig) -> Result<BoundFit> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(IdlaError::domain(format!("cap radius must be positive, got {r}")));
    }
    if lambdas.is_empty() {
        return Err(IdlaError::domain("empty intensity grid"));
    }
    let unbounded = Depth::Unbounded { escape_factor };
    unbounded.check(z.dim())?;
    let target = Target::new(z, mc.budget_factor)?;
    let (cap, rest) = cap_and_complement(&z, r)?;
    let origin = Site::origin(z.dim());
    let scale = r / z.norm().powi(z.dim() as i32 - 1);
    let mut points = Vec::with_capacity(lambdas.len());
    for (li, &lambda) in lambdas.iter().enumerate() {
        let zeros = mc.run(tags::JOINT_ZERO, |_, rng| {
            let mut rng = rng.derive(li as u64);
            let x = poisson_sample(lambda, &mut rng)?;
            for i in 0..x {
                let mut walk = rng.derive(i);
                let y = target.first_hit(origin, &mut walk)?;
                let counted = if cap.contains(&y) {
                    target.reaches(y, unbounded, &mut walk)?
                } else if rest.contains(&y) {
                    target.reaches(y, Depth::Finite(r), &mut walk)?
                } else {
                    false
                };
                if counted {
                    return Ok(false);
                }
            }
            Ok(true)
        })?;
        let zeros = zeros.into_iter().filter(|&b| b).count() as u64;
        let p_hat = zeros as f64 / mc.replicas as f64;
        points.push(ZeroProbePoint {
            lambda,
            scaled: lambda * scale,
            zeros,
            replicas: mc.replicas,
            p_hat,
            stderr: binomial_std_error(p_hat, mc.replicas),
            neg_log_p: -p_hat.ln(),
        });
    }
    if let Some(p) = points.iter().find(|p| p.zeros == 0) {
        return Err(IdlaError::InsufficientResolution(format!(
            "no zero event at λ = {}; raise the replica count or lower λ",
            p.lambda
        )));
    }
    if points.iter().all(|p| p.zeros == p.replicas) {
        return Err(IdlaError::InsufficientResolution(
            "zero event at every replica; raise λ".into(),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.scaled).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.neg_log_p).collect();
    let fit = fit_through_origin(&xs, &ys)?;
    Ok(BoundFit {
        name: BoundName::JointZero,
        fitted_constant: fit.slope,
        stderr: fit.stderr,
        r_squared: fit.r_squared,
        sample_size: mc.replicas * points.len() as u64,
        band: (fit.slope - 1.96 * fit.stderr, fit.slope + 1.96 * fit.stderr),
        points,
    })
}

fn bernoulli_estimate(outcomes: &[bool]) -> Estimate {
    let n = outcomes.len() as u64;
    let p = outcomes.iter().filter(|&&b| b).count() as f64 / n as f64;
    Estimate {
        value: p,
        stderr: binomial_std_error(p, n),
        replicas: n,
    }
}

/// `P_y(walk ever hits z)`, declaring escape at distance
/// `escape_factor · ‖y − z‖` from `z`. The truncation lowers the estimate
/// by at most about `(1/escape_factor)^{d−2}`.
pub fn hit_prob_far(y: Site, z: Site, escape_factor: f64, mc: &McConfig) -> Result<Estimate> {
    if y.dim() != z.dim() {
        return Err(IdlaError::domain("sites of different dimensions"));
    }
    if y.dim() < 3 {
        return Err(IdlaError::domain(
            "hitting probability is 1 in d = 2; use hit_before_exit",
        ));
    }
    if !(escape_factor >= 10.0) {
        return Err(IdlaError::domain(format!(
            "escape factor must be >= 10, got {escape_factor}"
        )));
    }
    if y == z {
        return Ok(Estimate {
            value: 1.0,
            stderr: 0.0,
            replicas: mc.replicas,
        });
    }
    let dist = (y.dist2(&z) as f64).sqrt();
    let ball = BallSpec::new(z, escape_factor * dist)?;
    let budget = StepBudget::for_radius(mc.budget_factor, ball.radius.value());
    let outcomes = mc.run(tags::HIT_FAR, |_, mut rng| {
        Ok(hit_before_leaving_ball(y, z, &ball, &mut rng, budget)?.is_hit())
    })?;
    Ok(bernoulli_estimate(&outcomes))
}

/// `P_y(walk hits z before leaving 𝔹(0, ‖z‖ + depth))`.
pub fn hit_before_exit(y: Site, z: Site, depth: f64, mc: &McConfig) -> Result<Estimate> {
    if y.dim() != z.dim() {
        return Err(IdlaError::domain("sites of different dimensions"));
    }
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(IdlaError::domain(format!("depth must be positive, got {depth}")));
    }
    let ball = BallSpec::new(Site::origin(z.dim()), z.norm() + depth)?;
    let certain = |value| Estimate {
        value,
        stderr: 0.0,
        replicas: mc.replicas,
    };
    if y == z {
        return Ok(certain(1.0));
    }
    if !ball.contains(&y) {
        return Ok(certain(0.0));
    }
    let budget = StepBudget::for_radius(mc.budget_factor, ball.radius.value());
    let outcomes = mc.run(tags::HIT_EXIT, |_, mut rng| {
        Ok(hit_before_leaving_ball(y, z, &ball, &mut rng, budget)?.is_hit())
    })?;
    Ok(bernoulli_estimate(&outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_region_counts_nothing() {
        let eta = ParticleConfig::point(Site::origin(2), 50);
        let c = count_nz(
            &eta,
            Site::from([3, 0]),
            &BTreeSet::new(),
            Depth::Finite(2.0),
            &mut RngStream::new(0, 0),
            1e4,
        )
        .unwrap();
        assert_eq!(c.count, 0);
        assert_eq!(c.walkers, 50);
    }

    #[test]
    fn walks_from_z_count_immediately() {
        let z = Site::from([3, 1]);
        let eta = ParticleConfig::point(z, 7);
        let region = BTreeSet::from([z]);
        let c = count_nz(&eta, z, &region, Depth::Finite(1.0), &mut RngStream::new(0, 0), 1e4).unwrap();
        assert_eq!(c.count, 7);
    }

    #[test]
    fn region_outside_shell_is_rejected() {
        let eta = ParticleConfig::point(Site::origin(2), 1);
        let region = BTreeSet::from([Site::from([9, 9])]);
        let res = count_nz(
            &eta,
            Site::from([3, 0]),
            &region,
            Depth::Finite(1.0),
            &mut RngStream::new(0, 0),
            1e4,
        );
        assert!(matches!(res, Err(IdlaError::Domain(_))));
    }

    #[test]
    fn unbounded_depth_needs_transience() {
        let eta = ParticleConfig::point(Site::origin(2), 1);
        let res = count_nz(
            &eta,
            Site::from([3, 0]),
            &BTreeSet::new(),
            Depth::Unbounded { escape_factor: 10.0 },
            &mut RngStream::new(0, 0),
            1e4,
        );
        assert!(matches!(res, Err(IdlaError::Domain(_))));
    }

    #[test]
    fn split_with_zero_intensity_is_degenerate() {
        let z = Site::from([4, 0]);
        let (a, b) = reflection_halves(&z, 1).unwrap();
        let report = poisson_split_test(
            0.0,
            z,
            (&a, &b),
            (Depth::Finite(2.0), Depth::Finite(2.0)),
            &McConfig::new(0, 20),
        )
        .unwrap();
        assert!(report.degenerate);
        assert_eq!(report.means, [0.0, 0.0]);
        assert!(report.independence.is_none());
    }

    #[test]
    fn overlapping_partition_is_rejected() {
        let z = Site::from([4, 0]);
        let shell = sphere_shell(&z).unwrap();
        let res = poisson_split_test(
            1.0,
            z,
            (&shell, &shell),
            (Depth::Finite(2.0), Depth::Finite(2.0)),
            &McConfig::new(0, 2),
        );
        assert!(res.is_err());
    }

    #[test]
    fn reflection_halves_mirror() {
        let z = Site::from([4, 0]);
        let (a, b) = reflection_halves(&z, 1).unwrap();
        assert_eq!(a.len(), b.len());
        for s in &a {
            assert!(b.contains(&Site::from([s.coord(0), -s.coord(1)])));
        }
        assert!(reflection_halves(&z, 0).is_err());
    }

    #[test]
    fn zero_intensity_has_zero_log() {
        let z = Site::from([3, 0, 0]);
        let res = joint_zero_probe(&[0.0], z, 1.0, 10.0, &McConfig::new(0, 10));
        assert!(matches!(res, Err(IdlaError::InsufficientResolution(_))));
        let fit = joint_zero_probe(&[0.0, 30.0], z, 1.0, 10.0, &McConfig::new(0, 200)).unwrap();
        assert_eq!(fit.points[0].p_hat, 1.0);
        assert_eq!(fit.points[0].neg_log_p, 0.0);
        assert!(fit.points[1].neg_log_p > 0.0);
        assert!(joint_zero_probe(&[1.0], z, 0.0, 10.0, &McConfig::new(0, 10)).is_err());
    }

    #[test]
    fn hit_probability_edge_cases() {
        let mc = McConfig::new(0, 10);
        let z = Site::from([2, 0, 0]);
        assert_eq!(hit_prob_far(z, z, 10.0, &mc).unwrap().value, 1.0);
        assert!(hit_prob_far(Site::from([1, 0]), Site::from([2, 0]), 10.0, &mc).is_err());
        assert!(hit_prob_far(Site::origin(3), z, 5.0, &mc).is_err());

        let z = Site::from([8, 0]);
        assert_eq!(hit_before_exit(z, z, 3.0, &mc).unwrap().value, 1.0);
        assert_eq!(hit_before_exit(Site::from([11, 0]), z, 3.0, &mc).unwrap().value, 0.0);
        assert!(hit_before_exit(Site::origin(2), z, 0.0, &mc).is_err());
    }
}

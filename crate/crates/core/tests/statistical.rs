//! Monte Carlo cross-checks against exact or independently computed values.

use std::collections::{BTreeMap, BTreeSet};

use idla::cluster::{grow_from_origin, poisson_sample, three_wave_build, Cluster, ParticleConfig};
use idla::fluctuation::{inner_error, outer_error};
use idla::geometry::{ball_count, sphere_shell, Radius, Site};
use idla::harmonic::{
    count_nz, hit_before_exit, hit_prob_far, nz_mean_two_factor, poisson_split_test, reflection_halves, Depth,
};
use idla::oracle::settle_distribution_exact;
use idla::par::McConfig;
use idla::stats::{mean, std_error, variance};
use idla::walk::RngStream;
use statrs::function::gamma::gamma;

fn settle_frequencies(cluster: &BTreeSet<Site>, samples: u64, seed: u64) -> BTreeMap<Site, u64> {
    let c = Cluster::from_sites(2, cluster.iter().copied()).unwrap();
    let mut rng = RngStream::new(seed, 0);
    let mut counts = BTreeMap::new();
    for _ in 0..samples {
        *counts.entry(c.settle(Site::origin(2), &mut rng).unwrap()).or_insert(0) += 1;
    }
    counts
}

fn within_sigmas(counts: &BTreeMap<Site, u64>, law: &BTreeMap<Site, f64>, samples: u64, k: f64) {
    assert_eq!(counts.keys().collect::<Vec<_>>(), law.keys().collect::<Vec<_>>());
    for (s, &p) in law {
        let hat = counts[s] as f64 / samples as f64;
        let sigma = (p * (1.0 - p) / samples as f64).sqrt();
        assert!((hat - p).abs() <= k * sigma, "{s}: {hat} vs {p}");
    }
}

#[test]
fn single_site_settles_uniformly_on_neighbours() {
    let cluster = BTreeSet::from([Site::origin(2)]);
    let samples = 100_000;
    let counts = settle_frequencies(&cluster, samples, 1);
    let law: BTreeMap<Site, f64> = Site::origin(2).neighbors().map(|s| (s, 0.25)).collect();
    within_sigmas(&counts, &law, samples, 3.0);
}

#[test]
fn domino_settles_like_the_absorption_solve() {
    let cluster = BTreeSet::from([Site::origin(2), Site::from([1, 0])]);
    let law = settle_distribution_exact(&cluster, Site::origin(2)).unwrap();
    let samples = 1_000_000;
    within_sigmas(&settle_frequencies(&cluster, samples, 2), &law, samples, 4.0);
}

#[test]
fn poisson_moments() {
    let mut rng = RngStream::new(3, 0);
    let big: Vec<f64> = (0..10_000)
        .map(|_| poisson_sample(1e4, &mut rng).unwrap() as f64)
        .collect();
    assert!((mean(&big) - 1e4).abs() <= 4.0);
    let small: Vec<f64> = (0..20_000)
        .map(|_| poisson_sample(5.0, &mut rng).unwrap() as f64)
        .collect();
    // variance of the sample variance of Poisson(5): (μ4 − σ⁴(n−3)/(n−1))/n, μ4 = 5 + 3·25
    let n = small.len() as f64;
    let sigma = ((80.0 - 25.0 * (n - 3.0) / (n - 1.0)) / n).sqrt();
    assert!((variance(&small) - 5.0).abs() <= 3.0 * sigma);
}

#[test]
fn wave_decomposition_preserves_the_law() {
    let (n, m, replicas) = (150u64, 150u64, 400u64);
    let total = n + m;
    let radius = Radius::new(7.0).unwrap();
    let nominal = 9.8;
    let mut one = (Vec::new(), Vec::new());
    let mut three = (Vec::new(), Vec::new());
    for r in 0..replicas {
        let mut c = Cluster::new(2).unwrap();
        grow_from_origin(&mut c, total, &mut RngStream::new(10, r)).unwrap();
        one.0.push(inner_error(&c, nominal));
        one.1.push(outer_error(&c, nominal));
        let c = three_wave_build(2, n, m, radius, &mut RngStream::new(11, r)).unwrap();
        three.0.push(inner_error(&c, nominal));
        three.1.push(outer_error(&c, nominal));
    }
    for (a, b) in [(&one.0, &three.0), (&one.1, &three.1)] {
        let se = (std_error(a).powi(2) + std_error(b).powi(2)).sqrt();
        assert!((mean(a) - mean(b)).abs() <= 4.0 * se, "{} vs {}", mean(a), mean(b));
    }
}

fn polya_return_probability() -> f64 {
    let u = 6f64.sqrt() / (32.0 * std::f64::consts::PI.powi(3))
        * gamma(1.0 / 24.0)
        * gamma(5.0 / 24.0)
        * gamma(7.0 / 24.0)
        * gamma(11.0 / 24.0);
    1.0 - 1.0 / u
}

#[test]
fn neighbour_hitting_matches_return_probability() {
    let p = polya_return_probability();
    assert!((p - 0.340537329550999).abs() < 1e-12);
    let z = Site::from([0, 0, 0]);
    let est = hit_prob_far(Site::from([1, 0, 0]), z, 50.0, &McConfig::new(4, 100_000)).unwrap();
    assert!((est.value - p).abs() < 0.01, "{est:?}");
}

#[test]
fn far_hitting_decays_like_green() {
    let z = Site::from([0, 0, 0]);
    let mc = McConfig::new(5, 20_000);
    let scaled: Vec<f64> = [2, 4, 8]
        .iter()
        .map(|&k| hit_prob_far(Site::from([k, 0, 0]), z, 10.0, &mc).unwrap().value * k as f64)
        .collect();
    let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scaled.iter().cloned().fold(0.0, f64::max);
    assert!((hi - lo) / hi < 0.25, "{scaled:?}");
}

#[test]
fn exit_hitting_decreases_with_distance() {
    let z = Site::from([8, 0]);
    let shell = sphere_shell(&z).unwrap();
    let mut ys: Vec<Site> = shell.into_iter().filter(|s| s.coord(1) >= 0).collect();
    ys.sort_by_key(|y| y.dist2(&z));
    let picks: Vec<Site> = [1u64, 4, 16, 64]
        .iter()
        .map(|&d2| *ys.iter().find(|y| y.dist2(&z) >= d2).unwrap())
        .collect();
    let mc = McConfig::new(6, 20_000);
    let est: Vec<f64> = picks
        .iter()
        .map(|&y| hit_before_exit(y, z, 3.0, &mc).unwrap().value)
        .collect();
    assert!(est.windows(2).all(|w| w[1] < w[0]), "{est:?}");
}

#[test]
fn nz_mean_matches_two_factor_formula() {
    let z = Site::from([5, 0]);
    let region = sphere_shell(&z).unwrap();
    let eta = ParticleConfig::point(Site::origin(2), 1000);
    let depth = Depth::Finite(2.0);
    let replicas = 300;
    let counts: Vec<f64> = (0..replicas)
        .map(|r| {
            count_nz(&eta, z, &region, depth, &mut RngStream::new(7, r), 1e4)
                .unwrap()
                .count as f64
        })
        .collect();
    let formula = nz_mean_two_factor(1000.0, z, &region, depth, &McConfig::new(8, 20_000)).unwrap();
    let se = (std_error(&counts).powi(2) + formula.stderr.powi(2)).sqrt();
    assert!(
        (mean(&counts) - formula.value).abs() <= 3.0 * se,
        "{} vs {formula:?}",
        mean(&counts)
    );
}

#[test]
fn symmetric_halves_have_equal_means() {
    let z = Site::from([4, 0]);
    let (upper, lower) = reflection_halves(&z, 1).unwrap();
    let report = poisson_split_test(
        20.0,
        z,
        (&upper, &lower),
        (Depth::Finite(2.0), Depth::Finite(2.0)),
        &McConfig::new(9, 3000),
    )
    .unwrap();
    let se = (report.stderrs[0].powi(2) + report.stderrs[1].powi(2)).sqrt();
    assert!((report.means[0] - report.means[1]).abs() <= 3.0 * se, "{report:?}");
    assert!(!report.degenerate);
}

#[test]
fn ball_filling_count_is_exact() {
    assert_eq!(ball_count(2, 5.0).unwrap(), 69);
}

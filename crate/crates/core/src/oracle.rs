//! Exact laws on small instances: settling distributions from absorption
//! linear systems, and the law of the cluster after a few explorers.

// Row operations read clearest with explicit indices.
#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::cluster::{grow_from_origin, Cluster};
use crate::error::{IdlaError, Result};
use crate::geometry::{check_dim, outer_boundary, Site};
use crate::par::{tags, McConfig};

/// Clusters up to this size are solved in exact rational arithmetic.
pub const EXACT_SOLVE_LIMIT: usize = 20;
/// Largest cluster accepted by [`settle_distribution_exact`].
pub const MAX_ORACLE_CLUSTER: usize = 1000;
/// Largest explorer count accepted by [`cluster_distribution_exact`].
pub const MAX_ORACLE_PARTICLES: u64 = 5;

/// Interior sites (the cluster), boundary targets, and for each interior
/// site its interior and boundary neighbours, in index form.
struct Absorption {
    interior: Vec<Site>,
    targets: Vec<Site>,
    interior_nbrs: Vec<Vec<usize>>,
    target_nbrs: Vec<Vec<usize>>,
    degree: usize,
}

impl Absorption {
    fn new(cluster: &BTreeSet<Site>) -> Absorption {
        let interior: Vec<Site> = cluster.iter().copied().collect();
        let targets: Vec<Site> = outer_boundary(cluster).into_iter().collect();
        let index_of = |v: &[Site], s: &Site| v.binary_search(s).ok();
        let mut interior_nbrs = Vec::with_capacity(interior.len());
        let mut target_nbrs = Vec::with_capacity(interior.len());
        for x in &interior {
            let mut inner = Vec::new();
            let mut outer = Vec::new();
            for y in x.neighbors() {
                if let Some(i) = index_of(&interior, &y) {
                    inner.push(i);
                } else if let Some(t) = index_of(&targets, &y) {
                    outer.push(t);
                }
            }
            interior_nbrs.push(inner);
            target_nbrs.push(outer);
        }
        let degree = 2 * interior.first().map_or(1, |s| s.dim());
        Absorption {
            interior,
            targets,
            interior_nbrs,
            target_nbrs,
            degree,
        }
    }

    /// `(2d·I − A) U = N` with one column of `N` per target.
    fn system<T>(&self, from_int: impl Fn(i64) -> T) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let n = self.interior.len();
        let m = self.targets.len();
        let mut a = vec![vec![0i64; n]; n];
        let mut b = vec![vec![0i64; m]; n];
        for i in 0..n {
            a[i][i] = self.degree as i64;
            for &j in &self.interior_nbrs[i] {
                a[i][j] -= 1;
            }
            for &t in &self.target_nbrs[i] {
                b[i][t] += 1;
            }
        }
        let convert = |rows: Vec<Vec<i64>>| {
            rows.into_iter()
                .map(|r| r.into_iter().map(&from_int).collect())
                .collect()
        };
        (convert(a), convert(b))
    }
}

fn check_cluster(cluster: &BTreeSet<Site>, start: &Site) -> Result<()> {
    if cluster.len() > MAX_ORACLE_CLUSTER {
        return Err(IdlaError::capacity(format!(
            "exact settling limited to {MAX_ORACLE_CLUSTER} sites, got {}",
            cluster.len()
        )));
    }
    if cluster.iter().any(|s| s.dim() != start.dim()) {
        return Err(IdlaError::domain("cluster and start have different dimensions"));
    }
    Ok(())
}

/// Exact settling law in rational arithmetic.
pub fn settle_distribution_rational(cluster: &BTreeSet<Site>, start: Site) -> Result<BTreeMap<Site, BigRational>> {
    check_cluster(cluster, &start)?;
    if !cluster.contains(&start) {
        return Ok(BTreeMap::from([(start, BigRational::one())]));
    }
    let abs = Absorption::new(cluster);
    let (mut a, mut b) = abs.system(|v| BigRational::from_integer(BigInt::from(v)));
    let n = abs.interior.len();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .ok_or_else(|| IdlaError::Numeric("singular absorption system".into()))?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = a[col][col].recip();
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let factor = &a[r][col] * &inv;
            for c in col..n {
                let delta = &factor * &a[col][c];
                a[r][c] -= delta;
            }
            for t in 0..b[r].len() {
                let delta = &factor * &b[col][t];
                b[r][t] -= delta;
            }
        }
    }
    let row = abs.interior.binary_search(&start).expect("start in cluster");
    let mut out = BTreeMap::new();
    for (t, target) in abs.targets.iter().enumerate() {
        let p = &b[row][t] / &a[row][row];
        if !p.is_zero() {
            out.insert(*target, p);
        }
    }
    Ok(out)
}

/// Floating-point settling law by partial-pivot elimination.
pub fn settle_distribution_float(cluster: &BTreeSet<Site>, start: Site) -> Result<BTreeMap<Site, f64>> {
    check_cluster(cluster, &start)?;
    if !cluster.contains(&start) {
        return Ok(BTreeMap::from([(start, 1.0)]));
    }
    let abs = Absorption::new(cluster);
    let (a0, b0) = abs.system(|v| v as f64);
    let (mut a, mut b) = (a0.clone(), b0.clone());
    let n = abs.interior.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .expect("nonempty");
        if a[pivot][col].abs() < 1e-300 {
            return Err(IdlaError::Numeric("singular absorption system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= factor * a[col][c];
            }
            for t in 0..b[r].len() {
                b[r][t] -= factor * b[col][t];
            }
        }
    }
    let m = abs.targets.len();
    let mut u = vec![vec![0.0; m]; n];
    for r in (0..n).rev() {
        for t in 0..m {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * u[c][t]).sum();
            u[r][t] = (b[r][t] - s) / a[r][r];
        }
    }
    let mut residual = 0f64;
    for r in 0..n {
        for t in 0..m {
            let s: f64 = (0..n).map(|c| a0[r][c] * u[c][t]).sum();
            residual = residual.max((s - b0[r][t]).abs());
        }
    }
    if residual > 1e-10 {
        return Err(IdlaError::Numeric(format!(
            "absorption residual {residual:e} exceeds 1e-10"
        )));
    }
    let row = abs.interior.binary_search(&start).expect("start in cluster");
    Ok(abs
        .targets
        .iter()
        .zip(&u[row])
        .filter(|(_, &p)| p != 0.0)
        .map(|(t, &p)| (*t, p))
        .collect())
}

/// Law of the settling site of an explorer from `start`: rational for
/// clusters of at most [`EXACT_SOLVE_LIMIT`] sites, floating point above.
pub fn settle_distribution_exact(cluster: &BTreeSet<Site>, start: Site) -> Result<BTreeMap<Site, f64>> {
    if cluster.len() <= EXACT_SOLVE_LIMIT {
        Ok(settle_distribution_rational(cluster, start)?
            .into_iter()
            .map(|(s, p)| (s, to_f64(&p)))
            .collect())
    } else {
        settle_distribution_float(cluster, start)
    }
}

fn to_f64(p: &BigRational) -> f64 {
    p.to_f64().unwrap_or(f64::NAN)
}

/// Law of the occupied set, keyed by the set itself.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeDistribution {
    pub dim: usize,
    pub particles: u64,
    pub probs: BTreeMap<BTreeSet<Site>, f64>,
}

impl ShapeDistribution {
    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn get(&self, shape: &BTreeSet<Site>) -> f64 {
        self.probs.get(shape).copied().unwrap_or(0.0)
    }

    /// Empirical law of `shapes`.
    pub fn from_samples(
        dim: usize,
        particles: u64,
        shapes: impl IntoIterator<Item = BTreeSet<Site>>,
    ) -> ShapeDistribution {
        let mut counts: BTreeMap<BTreeSet<Site>, u64> = BTreeMap::new();
        let mut total = 0u64;
        for s in shapes {
            *counts.entry(s).or_insert(0) += 1;
            total += 1;
        }
        ShapeDistribution {
            dim,
            particles,
            probs: counts.into_iter().map(|(s, c)| (s, c as f64 / total as f64)).collect(),
        }
    }

    /// Probability that `site` is occupied.
    pub fn occupation(&self, site: &Site) -> f64 {
        self.probs
            .iter()
            .filter(|(s, _)| s.contains(site))
            .map(|(_, p)| p)
            .sum()
    }

    /// `shape,probability` rows; a shape is its sorted sites joined by `;`,
    /// each site as space-separated coordinates.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("shape,probability\n");
        for (shape, p) in &self.probs {
            let _ = writeln!(out, "{},{:.16e}", shape_key(shape), p);
        }
        out
    }
}

/// A shape as text: sorted sites joined by `;`, coordinates space-separated.
pub fn shape_key(shape: &BTreeSet<Site>) -> String {
    shape
        .iter()
        .map(|s| s.coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join(";")
}

/// Exact law of the cluster after `k` origin explorers, as rationals.
pub fn cluster_distribution_rational(k: u64, dim: usize) -> Result<BTreeMap<BTreeSet<Site>, BigRational>> {
    check_dim(dim)?;
    if k > MAX_ORACLE_PARTICLES {
        return Err(IdlaError::capacity(format!(
            "exact cluster laws limited to {MAX_ORACLE_PARTICLES} explorers, got {k}"
        )));
    }
    let origin = Site::origin(dim);
    let mut law = BTreeMap::from([(BTreeSet::new(), BigRational::one())]);
    for _ in 0..k {
        let mut next: BTreeMap<BTreeSet<Site>, BigRational> = BTreeMap::new();
        for (shape, p) in &law {
            for (site, q) in settle_distribution_rational(shape, origin)? {
                let mut grown = shape.clone();
                grown.insert(site);
                *next.entry(grown).or_insert_with(BigRational::zero) += p * q;
            }
        }
        law = next;
    }
    Ok(law)
}

/// [`cluster_distribution_rational`] as floats.
pub fn cluster_distribution_exact(k: u64, dim: usize) -> Result<ShapeDistribution> {
    let law = cluster_distribution_rational(k, dim)?;
    Ok(ShapeDistribution {
        dim,
        particles: k,
        probs: law.into_iter().map(|(s, p)| (s, to_f64(&p))).collect(),
    })
}

/// Empirical law of the cluster after `k` origin explorers over
/// `mc.replicas` independent growths.
pub fn cluster_distribution_sampled(k: u64, dim: usize, mc: &McConfig) -> Result<ShapeDistribution> {
    let shapes = mc.run(tags::ORACLE, |_, mut rng| {
        let mut cluster = Cluster::with_radius(dim, k as f64)?;
        cluster.set_budget_factor(mc.budget_factor);
        grow_from_origin(&mut cluster, k, &mut rng)?;
        Ok(cluster.site_set())
    })?;
    Ok(ShapeDistribution::from_samples(dim, k, shapes))
}

/// `½ Σ |p − q|` over the union of supports.
pub fn tv_distance(p: &ShapeDistribution, q: &ShapeDistribution) -> f64 {
    let mut sum = 0.0;
    for (s, a) in &p.probs {
        sum += (a - q.get(s)).abs();
    }
    for (s, b) in &q.probs {
        if !p.probs.contains_key(s) {
            sum += b.abs();
        }
    }
    0.5 * sum
}

/// Largest absolute deviation of the rational law from total mass one.
pub fn rational_mass_defect(law: &BTreeMap<Site, BigRational>) -> BigRational {
    let total: BigRational = law.values().sum();
    (total - BigRational::one()).abs()
}

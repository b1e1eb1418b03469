//! Integer-lattice geometry: sites, strict Euclidean balls, shells, outer
//! boundaries, lattice ball volumes and their inverse.
//!
//! Every membership test compares an integer squared norm against an integer
//! threshold derived exactly from the floating-point radius, so no site is
//! misclassified by rounding. A site `y` lies in the ball of radius `r` iff
//! `‖y‖² < ⌈r²⌉`, where `⌈r²⌉` is computed from the exact binary value of `r`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{IdlaError, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 6;

/// A point of `Z^d`, `2 <= d <= MAX_DIM`.
///
/// Ordering is lexicographic in the coordinates (sites of different
/// dimensions never meet in one collection).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    coords: [i32; MAX_DIM],
    dim: u8,
}

impl Site {
    pub fn origin(dim: usize) -> Site {
        assert!((2..=MAX_DIM).contains(&dim), "dimension {dim} outside 2..={MAX_DIM}");
        Site {
            coords: [0; MAX_DIM],
            dim: dim as u8,
        }
    }

    pub fn new(coords: &[i32]) -> Result<Site> {
        check_dim(coords.len())?;
        let mut site = Site::origin(coords.len());
        site.coords[..coords.len()].copy_from_slice(coords);
        Ok(site)
    }

    /// The site `t·e_axis`.
    pub fn on_axis(dim: usize, axis: usize, t: i32) -> Site {
        let mut site = Site::origin(dim);
        site.coords[axis] = t;
        site
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> i32 {
        self.coords[axis]
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    #[inline]
    pub fn norm2(&self) -> u64 {
        self.coords().iter().map(|&c| (c as i64 * c as i64) as u64).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    #[inline]
    pub fn dist2(&self, other: &Site) -> u64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(&a, &b)| {
                let d = a as i64 - b as i64;
                (d * d) as u64
            })
            .sum()
    }

    /// Moves one lattice step. Direction `2i` is `+e_i`, `2i + 1` is `-e_i`.
    #[inline]
    pub fn step(&mut self, direction: usize) {
        debug_assert!(direction < 2 * self.dim());
        let delta = if direction & 1 == 0 { 1 } else { -1 };
        self.coords[direction >> 1] += delta;
    }

    #[inline]
    pub fn neighbor(&self, direction: usize) -> Site {
        let mut next = *self;
        next.step(direction);
        next
    }

    pub fn neighbors(&self) -> impl Iterator<Item = Site> + '_ {
        (0..2 * self.dim()).map(move |dir| self.neighbor(dir))
    }

    pub fn offset(&self, other: &Site) -> Site {
        let mut out = *self;
        for (a, b) in out.coords.iter_mut().zip(other.coords.iter()) {
            *a += *b;
        }
        out
    }

    pub fn sub(&self, other: &Site) -> Site {
        let mut out = *self;
        for (a, b) in out.coords.iter_mut().zip(other.coords.iter()) {
            *a -= *b;
        }
        out
    }

    /// Squared norm after one step in `direction`, from `norm2`.
    #[inline]
    pub fn norm2_after_step(&self, norm2: u64, direction: usize) -> u64 {
        let c = self.coords[direction >> 1] as i64;
        let delta = if direction & 1 == 0 { 2 * c + 1 } else { 1 - 2 * c };
        (norm2 as i64 + delta) as u64
    }
}

impl<const N: usize> From<[i32; N]> for Site {
    fn from(coords: [i32; N]) -> Site {
        Site::new(&coords).expect("site dimension")
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

pub fn check_dim(dim: usize) -> Result<()> {
    if (2..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(IdlaError::domain(format!(
            "dimension {dim} unsupported (need 2..={MAX_DIM})"
        )))
    }
}

/// Membership oracle over lattice sites.
pub trait SiteSet {
    fn contains_site(&self, site: &Site) -> bool;
}

impl SiteSet for HashSet<Site> {
    fn contains_site(&self, site: &Site) -> bool {
        self.contains(site)
    }
}

impl SiteSet for BTreeSet<Site> {
    fn contains_site(&self, site: &Site) -> bool {
        self.contains(site)
    }
}

/// Adapts a predicate into a [`SiteSet`].
pub struct SitePredicate<F>(pub F);

impl<F: Fn(&Site) -> bool> SiteSet for SitePredicate<F> {
    fn contains_site(&self, site: &Site) -> bool {
        (self.0)(site)
    }
}

/// Smallest integer `T` with `T >= r²`, computed from the exact binary value
/// of `r`. For integer `m`, `m < r²` iff `m < T`.
pub fn norm2_threshold(r: f64) -> Result<u64> {
    if !r.is_finite() || r < 0.0 {
        return Err(IdlaError::domain(format!(
            "radius must be finite and nonnegative, got {r}"
        )));
    }
    if r == 0.0 {
        return Ok(0);
    }
    let bits = r.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if biased == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), biased - 1075)
    };
    let m2 = mantissa as u128 * mantissa as u128;
    let t = if exp >= 0 {
        let shift = 2 * exp as u32;
        if shift >= 64 || m2.leading_zeros() < shift + 64 {
            return Err(IdlaError::capacity(format!("radius {r} squared overflows")));
        }
        m2 << shift
    } else {
        let k = (-2 * exp) as u32;
        if k >= 120 {
            1
        } else {
            (m2 + (1u128 << k) - 1) >> k
        }
    };
    u64::try_from(t).map_err(|_| IdlaError::capacity(format!("radius {r} squared overflows")))
}

/// A radius together with its exact squared-norm threshold.
///
/// Built either from a float (`⌈r²⌉` of its binary value) or exactly from a
/// squared norm, so that the ball of radius `‖z‖` never picks up `z` through
/// rounding of `√(‖z‖²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Radius {
    value: f64,
    threshold: u64,
}

impl Radius {
    pub fn new(r: f64) -> Result<Radius> {
        Ok(Radius {
            value: r,
            threshold: norm2_threshold(r)?,
        })
    }

    /// Radius `√norm2`, exactly.
    pub fn from_norm2(norm2: u64) -> Radius {
        Radius {
            value: (norm2 as f64).sqrt(),
            threshold: norm2,
        }
    }

    /// Radius `‖site‖`, exactly.
    pub fn norm_of(site: &Site) -> Radius {
        Radius::from_norm2(site.norm2())
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Membership in the ball of this radius is `norm² < threshold`.
    #[inline]
    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    #[inline]
    pub fn holds(&self, norm2: u64) -> bool {
        norm2 < self.threshold
    }
}

/// Strict ball `{y : ‖y − center‖ < radius}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallSpec {
    pub center: Site,
    pub radius: Radius,
}

impl BallSpec {
    pub fn new(center: Site, radius: f64) -> Result<BallSpec> {
        Ok(BallSpec::with_radius(center, Radius::new(radius)?))
    }

    pub fn with_radius(center: Site, radius: Radius) -> BallSpec {
        BallSpec { center, radius }
    }

    pub fn centered(dim: usize, radius: f64) -> Result<BallSpec> {
        check_dim(dim)?;
        BallSpec::new(Site::origin(dim), radius)
    }

    #[inline]
    pub fn contains(&self, site: &Site) -> bool {
        self.radius.holds(site.dist2(&self.center))
    }

    /// Sites of the ball in lexicographic order.
    pub fn sites(&self) -> Vec<Site> {
        let mut out = Vec::new();
        for_each_offset_below(self.center.dim(), self.radius.threshold(), |offset| {
            out.push(self.center.offset(offset))
        });
        out
    }
}

impl SiteSet for BallSpec {
    fn contains_site(&self, site: &Site) -> bool {
        self.contains(site)
    }
}

/// Annulus `{y : inner <= ‖y − center‖ < outer}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellSpec {
    pub center: Site,
    pub inner_radius: f64,
    pub outer_radius: f64,
    inner_threshold: u64,
    outer_threshold: u64,
}

impl ShellSpec {
    pub fn new(center: Site, inner_radius: f64, outer_radius: f64) -> Result<ShellSpec> {
        if inner_radius > outer_radius {
            return Err(IdlaError::domain(format!(
                "shell radii out of order: {inner_radius} > {outer_radius}"
            )));
        }
        Ok(ShellSpec {
            center,
            inner_radius,
            outer_radius,
            inner_threshold: norm2_threshold(inner_radius)?,
            outer_threshold: norm2_threshold(outer_radius)?,
        })
    }

    #[inline]
    pub fn contains(&self, site: &Site) -> bool {
        let d2 = site.dist2(&self.center);
        d2 >= self.inner_threshold && d2 < self.outer_threshold
    }

    pub fn sites(&self) -> Vec<Site> {
        let mut out = Vec::new();
        for_each_offset_below(self.center.dim(), self.outer_threshold, |offset| {
            if offset.norm2() >= self.inner_threshold {
                out.push(self.center.offset(offset));
            }
        });
        out
    }

    pub fn count(&self) -> Result<u64> {
        let dim = self.center.dim();
        Ok(count_norm2_below(dim, self.outer_threshold)? - count_norm2_below(dim, self.inner_threshold)?)
    }
}

impl SiteSet for ShellSpec {
    fn contains_site(&self, site: &Site) -> bool {
        self.contains(site)
    }
}

/// Calls `f` on every offset with squared norm `< threshold`, in lexicographic order.
pub(crate) fn for_each_offset_below(dim: usize, threshold: u64, mut f: impl FnMut(&Site)) {
    fn rec(site: &mut Site, axis: usize, remaining: u64, f: &mut impl FnMut(&Site)) {
        if axis == site.dim() {
            f(site);
            return;
        }
        // remaining > 0 here: x² < remaining
        let s = (remaining - 1).isqrt() as i32;
        for x in -s..=s {
            site.coords[axis] = x;
            let used = (x as i64 * x as i64) as u64;
            rec(site, axis + 1, remaining - used, f);
        }
        site.coords[axis] = 0;
    }
    if threshold == 0 {
        return;
    }
    let mut site = Site::origin(dim);
    rec(&mut site, 0, threshold, &mut f);
}

fn ball_cache() -> &'static RwLock<HashMap<(usize, u64), u64>> {
    static CACHE: OnceLock<RwLock<HashMap<(usize, u64), u64>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// `|{y ∈ Z^dim : ‖y‖² < threshold}|`, memoized per `(dim, threshold)`.
pub fn count_norm2_below(dim: usize, threshold: u64) -> Result<u64> {
    check_dim(dim)?;
    if let Some(&hit) = ball_cache().read().unwrap().get(&(dim, threshold)) {
        return Ok(hit);
    }
    // the continuum volume is within a few percent of the count long before
    // u64 overflow, so hopeless cases skip the exact recursion
    let r = (threshold as f64).sqrt();
    let half = dim as f64 / 2.0;
    let volume = std::f64::consts::PI.powf(half) / statrs::function::gamma::gamma(half + 1.0) * r.powi(dim as i32);
    if volume > 2.0 * u64::MAX as f64 {
        return Err(IdlaError::capacity(format!(
            "ball count in dimension {dim} below norm² {threshold} overflows u64"
        )));
    }
    let mut memo = HashMap::new();
    let count = count_rec(dim, threshold, &mut memo).ok_or_else(|| {
        IdlaError::capacity(format!(
            "ball count in dimension {dim} below norm² {threshold} overflows u64"
        ))
    })?;
    ball_cache().write().unwrap().insert((dim, threshold), count);
    Ok(count)
}

fn count_rec(dim: usize, t: u64, memo: &mut HashMap<(usize, u64), u64>) -> Option<u64> {
    if t == 0 {
        return Some(0);
    }
    let s = (t - 1).isqrt();
    if dim == 1 {
        return (2 * s).checked_add(1);
    }
    if let Some(&v) = memo.get(&(dim, t)) {
        return Some(v);
    }
    let mut total = count_rec(dim - 1, t, memo)?;
    for x in 1..=s {
        let sub = count_rec(dim - 1, t - x * x, memo)?;
        total = total.checked_add(sub.checked_mul(2)?)?;
    }
    memo.insert((dim, t), total);
    Some(total)
}

/// `b(r) = |𝔹(0, r)|`, the number of lattice sites of norm `< r`.
pub fn ball_count(dim: usize, r: f64) -> Result<u64> {
    count_norm2_below(dim, norm2_threshold(r)?)
}

/// Radius of the largest origin-centred lattice ball whose volume is at most
/// `gamma`: `sup{n ∈ Z≥0 : b(n) ≤ gamma}`. Inverts [`ball_count`] on integers.
pub fn rho(dim: usize, gamma: f64) -> Result<u64> {
    check_dim(dim)?;
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(IdlaError::domain(format!(
            "volume must be finite and nonnegative, got {gamma}"
        )));
    }
    let fits = |n: u64| -> Result<bool> { Ok(count_norm2_below(dim, n * n)? as f64 <= gamma) };
    // b(0) = 0 <= gamma always
    let mut lo = 0u64;
    let mut hi = 1u64;
    while fits(hi)? {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Outer site boundary: sites outside `set` adjacent to some site in it.
pub fn outer_boundary(set: &BTreeSet<Site>) -> BTreeSet<Site> {
    let mut out = BTreeSet::new();
    for site in set {
        for next in site.neighbors() {
            if !set.contains(&next) {
                out.insert(next);
            }
        }
    }
    out
}

/// `Σ(z) = ∂𝔹(0, ‖z‖)`, which always contains `z`.
pub fn sphere_shell(z: &Site) -> Result<BTreeSet<Site>> {
    if z.is_origin() {
        return Err(IdlaError::domain("Σ(z) needs z ≠ 0"));
    }
    let n2 = z.norm2();
    // every boundary site is within one step of the ball: ‖y‖ < ‖z‖ + 1
    let limit = n2 + 2 * (n2.isqrt() + 1) + 2;
    let mut out = BTreeSet::new();
    for_each_offset_below(z.dim(), limit, |y| {
        let y2 = y.norm2();
        if y2 >= n2 && (0..2 * y.dim()).any(|dir| y.norm2_after_step(y2, dir) < n2) {
            out.insert(*y);
        }
    });
    Ok(out)
}

/// Splits `Σ(z)` into the cap `Σ(z) ∩ 𝔹(z, radius)` and the rest.
pub fn cap_and_complement(z: &Site, radius: f64) -> Result<(BTreeSet<Site>, BTreeSet<Site>)> {
    if !(radius > 0.0) {
        return Err(IdlaError::domain(format!("cap radius must be > 0, got {radius}")));
    }
    let ball = BallSpec::new(*z, radius)?;
    Ok(sphere_shell(z)?.into_iter().partition(|y| ball.contains(y)))
}

/// All sites with `‖y‖² < limit`, sorted by `(‖y‖², lexicographic)`.
#[derive(Debug)]
pub struct NormOrder {
    pub dim: usize,
    pub limit: u64,
    pub sites: Vec<Site>,
}

fn norm_order_cache() -> &'static RwLock<HashMap<usize, Arc<NormOrder>>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<NormOrder>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// A shared [`NormOrder`] covering at least `‖y‖² < min_limit`.
pub fn norm_order(dim: usize, min_limit: u64) -> Result<Arc<NormOrder>> {
    check_dim(dim)?;
    if let Some(cached) = norm_order_cache().read().unwrap().get(&dim) {
        if cached.limit >= min_limit {
            return Ok(cached.clone());
        }
    }
    let mut cache = norm_order_cache().write().unwrap();
    if let Some(cached) = cache.get(&dim) {
        if cached.limit >= min_limit {
            return Ok(cached.clone());
        }
    }
    let previous = cache.get(&dim).map_or(0, |c| c.limit);
    let limit = min_limit.max(previous.saturating_mul(2)).max(64);
    let count = count_norm2_below(dim, limit)?;
    if count > (1 << 31) {
        return Err(IdlaError::capacity(format!("norm-ordered ball with {count} sites")));
    }
    let mut sites = Vec::with_capacity(count as usize);
    for_each_offset_below(dim, limit, |y| sites.push(*y));
    sites.sort_by_key(|s| (s.norm2(), *s));
    let order = Arc::new(NormOrder { dim, limit, sites });
    cache.insert(dim, order.clone());
    Ok(order)
}

//! The aggregation engine.
//!
//! An explorer walks from its start until it first stands on a site that is
//! not yet occupied, and settles there. Clusters grow one explorer at a time;
//! exploration waves stop explorers when they leave an origin ball and keep
//! the stopped configuration for a later release.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand_distr::{Distribution, Poisson};

use crate::error::{IdlaError, Result};
use crate::geometry::{check_dim, norm_order, NormOrder, Radius, Site, SiteSet, MAX_DIM};
use crate::walk::{DirectionSource, InstructionStacks, RngStream, StepBudget};

/// Finitely supported particle counts `η: Z^d → N`.
///
/// Launch order is lexicographic in the site, repeats consecutive.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParticleConfig {
    counts: BTreeMap<Site, u64>,
}

impl ParticleConfig {
    pub fn new() -> ParticleConfig {
        ParticleConfig::default()
    }

    /// `count · δ_site`.
    pub fn point(site: Site, count: u64) -> ParticleConfig {
        let mut cfg = ParticleConfig::new();
        cfg.add(site, count);
        cfg
    }

    pub fn add(&mut self, site: Site, count: u64) {
        if count > 0 {
            *self.counts.entry(site).or_insert(0) += count;
        }
    }

    /// `|η|`.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn get(&self, site: &Site) -> u64 {
        self.counts.get(site).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, u64)> + '_ {
        self.counts.iter().map(|(s, &c)| (*s, c))
    }

    /// One entry per particle, in launch order.
    pub fn launch_order(&self) -> impl Iterator<Item = Site> + '_ {
        self.counts
            .iter()
            .flat_map(|(s, &c)| std::iter::repeat_n(*s, c as usize))
    }
}

impl FromIterator<Site> for ParticleConfig {
    fn from_iter<I: IntoIterator<Item = Site>>(iter: I) -> Self {
        let mut cfg = ParticleConfig::new();
        for s in iter {
            cfg.add(s, 1);
        }
        cfg
    }
}

/// Dense occupancy bitmap over the box `[-half, half]^d`.
///
/// Occupied sites keep every coordinate within `half - 1`, so a walk that
/// only moves off occupied sites never leaves the box.
#[derive(Clone, Debug)]
struct DenseGrid {
    dim: usize,
    half: i32,
    strides: [usize; MAX_DIM],
    offsets: [isize; 2 * MAX_DIM],
    cells: Vec<u8>,
}

impl DenseGrid {
    fn new(dim: usize, half: i32) -> Result<DenseGrid> {
        let side = 2 * half as usize + 1;
        let cells = side
            .checked_pow(dim as u32)
            .filter(|&n| n <= 1 << 34)
            .ok_or_else(|| IdlaError::capacity(format!("dense grid of side {side} in d={dim}")))?;
        let mut strides = [0usize; MAX_DIM];
        let mut stride = 1usize;
        for axis in (0..dim).rev() {
            strides[axis] = stride;
            stride *= side;
        }
        let mut offsets = [0isize; 2 * MAX_DIM];
        for axis in 0..dim {
            offsets[2 * axis] = strides[axis] as isize;
            offsets[2 * axis + 1] = -(strides[axis] as isize);
        }
        Ok(DenseGrid {
            dim,
            half,
            strides,
            offsets,
            cells: vec![0; cells],
        })
    }

    #[inline]
    fn index(&self, site: &Site) -> Option<usize> {
        let mut idx = 0usize;
        for axis in 0..self.dim {
            let c = site.coord(axis);
            if c < -self.half || c > self.half {
                return None;
            }
            idx += (c + self.half) as usize * self.strides[axis];
        }
        Some(idx)
    }

    #[inline]
    fn get(&self, site: &Site) -> bool {
        self.index(site).is_some_and(|i| self.cells[i] != 0)
    }

    fn fits(&self, site: &Site) -> bool {
        site.coords().iter().all(|&c| c.abs() < self.half)
    }

    fn grow_to_fit(&mut self, site: &Site) -> Result<()> {
        if self.fits(site) {
            return Ok(());
        }
        let need = site.coords().iter().map(|c| c.abs()).max().unwrap_or(0) + 2;
        let half = need.max(self.half.saturating_mul(2));
        let mut bigger = DenseGrid::new(self.dim, half)?;
        for s in self.sites() {
            let i = bigger.index(&s).expect("grown box contains old box");
            bigger.cells[i] = 1;
        }
        *self = bigger;
        Ok(())
    }

    fn set(&mut self, site: &Site) -> Result<bool> {
        self.grow_to_fit(site)?;
        let i = self.index(site).expect("site fits");
        let fresh = self.cells[i] == 0;
        self.cells[i] = 1;
        Ok(fresh)
    }

    /// Occupied sites in lexicographic order (the index order).
    fn sites(&self) -> Vec<Site> {
        let side = 2 * self.half as usize + 1;
        let mut out = Vec::new();
        for (i, &c) in self.cells.iter().enumerate() {
            if c != 0 {
                let mut coords = [0i32; MAX_DIM];
                let mut rest = i;
                for axis in (0..self.dim).rev() {
                    coords[axis] = (rest % side) as i32 - self.half;
                    rest /= side;
                }
                out.push(Site::new(&coords[..self.dim]).expect("grid dim"));
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Occupancy {
    Dense(DenseGrid),
    Sparse(HashSet<Site>),
}

/// An occupied set with the bookkeeping needed for inner/outer errors.
#[derive(Clone, Debug)]
pub struct Cluster {
    dim: usize,
    occupancy: Occupancy,
    len: u64,
    initial_len: u64,
    particle_count: u64,
    max_norm2: Option<u64>,
    // order[cursor] is the unoccupied site of least (norm², lex)
    order: Arc<NormOrder>,
    cursor: usize,
    budget_factor: f64,
}

impl Cluster {
    /// Empty cluster on a dense, self-expanding grid.
    pub fn new(dim: usize) -> Result<Cluster> {
        Cluster::with_radius(dim, 6.0)
    }

    /// Empty dense cluster sized for growth up to about `radius`.
    pub fn with_radius(dim: usize, radius: f64) -> Result<Cluster> {
        check_dim(dim)?;
        let half = (radius.max(1.0) * 1.25).ceil() as i32 + 3;
        Cluster::build(dim, Occupancy::Dense(DenseGrid::new(dim, half)?))
    }

    /// Empty cluster backed by a hash set, for scattered sources.
    pub fn new_sparse(dim: usize) -> Result<Cluster> {
        check_dim(dim)?;
        Cluster::build(dim, Occupancy::Sparse(HashSet::new()))
    }

    /// Cluster whose initial explored region is `sites`.
    pub fn from_sites(dim: usize, sites: impl IntoIterator<Item = Site>) -> Result<Cluster> {
        let mut cluster = Cluster::new(dim)?;
        for s in sites {
            if s.dim() != dim {
                return Err(IdlaError::domain(format!("site {s} is not {dim}-dimensional")));
            }
            cluster.insert(s)?;
        }
        cluster.initial_len = cluster.len;
        Ok(cluster)
    }

    fn build(dim: usize, occupancy: Occupancy) -> Result<Cluster> {
        Ok(Cluster {
            dim,
            occupancy,
            len: 0,
            initial_len: 0,
            particle_count: 0,
            max_norm2: None,
            order: norm_order(dim, 64)?,
            cursor: 0,
            budget_factor: StepBudget::DEFAULT_FACTOR,
        })
    }

    pub fn set_budget_factor(&mut self, factor: f64) {
        self.budget_factor = factor;
    }

    pub fn budget_factor(&self) -> f64 {
        self.budget_factor
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of occupied sites.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Explorers settled since construction.
    pub fn particle_count(&self) -> u64 {
        self.particle_count
    }

    pub fn initial_len(&self) -> u64 {
        self.initial_len
    }

    #[inline]
    pub fn contains(&self, site: &Site) -> bool {
        match &self.occupancy {
            Occupancy::Dense(g) => g.get(site),
            Occupancy::Sparse(s) => s.contains(site),
        }
    }

    /// Largest squared norm of an occupied site.
    pub fn max_occupied_norm2(&self) -> Option<u64> {
        self.max_norm2
    }

    /// Unoccupied site of least norm (ties broken lexicographically).
    pub fn min_unoccupied(&self) -> Site {
        self.order.sites[self.cursor]
    }

    pub fn min_unoccupied_norm2(&self) -> u64 {
        self.min_unoccupied().norm2()
    }

    /// Occupied sites in lexicographic order.
    pub fn sites(&self) -> Vec<Site> {
        match &self.occupancy {
            Occupancy::Dense(g) => g.sites(),
            Occupancy::Sparse(s) => {
                let mut v: Vec<Site> = s.iter().copied().collect();
                v.sort();
                v
            }
        }
    }

    pub fn site_set(&self) -> BTreeSet<Site> {
        self.sites().into_iter().collect()
    }

    /// Step budget for one explorer walking inside the current cluster.
    pub fn step_budget(&self) -> StepBudget {
        let r = self.max_norm2.map_or(0.0, |n2| (n2 as f64).sqrt());
        StepBudget::for_radius(self.budget_factor, r)
    }

    fn insert(&mut self, site: Site) -> Result<bool> {
        let fresh = match &mut self.occupancy {
            Occupancy::Dense(g) => g.set(&site)?,
            Occupancy::Sparse(s) => s.insert(site),
        };
        if !fresh {
            return Ok(false);
        }
        self.len += 1;
        let n2 = site.norm2();
        self.max_norm2 = Some(self.max_norm2.map_or(n2, |m| m.max(n2)));
        if site == self.order.sites[self.cursor] {
            self.advance_cursor()?;
        }
        Ok(true)
    }

    fn advance_cursor(&mut self) -> Result<()> {
        loop {
            self.cursor += 1;
            if self.cursor == self.order.sites.len() {
                // a larger order shares the prefix, so the cursor stays valid
                self.order = norm_order(self.dim, self.order.limit.saturating_mul(4))?;
            }
            if !self.contains(&self.order.sites[self.cursor]) {
                return Ok(());
            }
        }
    }

    /// Adds a settled explorer at `site`.
    pub fn add_settled(&mut self, site: Site) -> Result<()> {
        if !self.insert(site)? {
            return Err(IdlaError::domain(format!("site {site} is already occupied")));
        }
        self.particle_count += 1;
        Ok(())
    }

    /// Settling site of an explorer from `start`: its position at the first
    /// time it is outside the cluster. Does not modify the cluster.
    pub fn settle<S: DirectionSource + ?Sized>(&self, start: Site, source: &mut S) -> Result<Site> {
        let budget = self.step_budget();
        match &self.occupancy {
            Occupancy::Dense(g) => {
                let Some(mut idx) = g.index(&start) else {
                    return Ok(start);
                };
                let mut pos = start;
                let mut steps = 0u64;
                while g.cells[idx] != 0 {
                    if steps >= budget.0 {
                        return Err(IdlaError::BudgetExceeded {
                            budget: budget.0,
                            start,
                            position: pos,
                        });
                    }
                    let dir = source.next_direction(&pos);
                    pos.step(dir);
                    idx = idx.wrapping_add_signed(g.offsets[dir]);
                    steps += 1;
                }
                Ok(pos)
            }
            Occupancy::Sparse(set) => crate::walk::run_until_exit(start, set, source, budget).map(|(s, _)| s),
        }
    }

    /// Launches one explorer from `start` and adds its settling site.
    pub fn grow_from<S: DirectionSource + ?Sized>(&mut self, start: Site, source: &mut S) -> Result<Site> {
        let site = self.settle(start, source)?;
        self.add_settled(site)?;
        Ok(site)
    }

    /// Snapshot text: a `# idla d=.. particles=.. seed=..` header, then one
    /// site per line in lexicographic order.
    pub fn to_snapshot(&self, seed: u64) -> String {
        let mut out = format!(
            "# idla d={} particles={} seed={}\n",
            self.dim, self.particle_count, seed
        );
        for s in self.sites() {
            let line: Vec<String> = s.coords().iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    /// Parses snapshot text; returns the cluster and the recorded seed.
    pub fn from_snapshot(text: &str) -> Result<(Cluster, u64)> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| IdlaError::Parse("empty snapshot".into()))?;
        let mut dim = None;
        let mut particles = None;
        let mut seed = None;
        let fields = header
            .strip_prefix("# idla ")
            .ok_or_else(|| IdlaError::Parse(format!("bad snapshot header: {header}")))?;
        for field in fields.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| IdlaError::Parse(format!("bad header field: {field}")))?;
            let value: u64 = value
                .parse()
                .map_err(|_| IdlaError::Parse(format!("bad header value: {field}")))?;
            match key {
                "d" => dim = Some(value as usize),
                "particles" => particles = Some(value),
                "seed" => seed = Some(value),
                _ => return Err(IdlaError::Parse(format!("unknown header field: {key}"))),
            }
        }
        let (Some(dim), Some(particles), Some(seed)) = (dim, particles, seed) else {
            return Err(IdlaError::Parse(format!("incomplete snapshot header: {header}")));
        };
        let mut sites = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let coords: std::result::Result<Vec<i32>, _> = line.split_whitespace().map(str::parse).collect();
            let coords = coords.map_err(|_| IdlaError::Parse(format!("bad site line: {line}")))?;
            if coords.len() != dim {
                return Err(IdlaError::Parse(format!("site line has wrong arity: {line}")));
            }
            sites.push(Site::new(&coords)?);
        }
        let mut cluster = Cluster::from_sites(dim, sites)?;
        if particles > cluster.len {
            return Err(IdlaError::Parse(format!(
                "{particles} particles but only {} sites",
                cluster.len
            )));
        }
        cluster.particle_count = particles;
        cluster.initial_len = cluster.len - particles;
        Ok((cluster, seed))
    }
}

impl SiteSet for Cluster {
    fn contains_site(&self, site: &Site) -> bool {
        self.contains(site)
    }
}

/// Launches every particle of `starts`, one at a time, in launch order.
pub fn grow_sequential<S: DirectionSource + ?Sized>(
    cluster: &mut Cluster,
    starts: &ParticleConfig,
    source: &mut S,
) -> Result<()> {
    for start in starts.launch_order() {
        cluster.grow_from(start, source)?;
    }
    Ok(())
}

/// Launches explorers from the listed starts, in exactly that order.
pub fn grow_in_order<S: DirectionSource + ?Sized>(
    cluster: &mut Cluster,
    starts: &[Site],
    source: &mut S,
) -> Result<()> {
    for &start in starts {
        cluster.grow_from(start, source)?;
    }
    Ok(())
}

/// `count` explorers from the origin.
pub fn grow_from_origin<S: DirectionSource + ?Sized>(cluster: &mut Cluster, count: u64, source: &mut S) -> Result<()> {
    let origin = Site::origin(cluster.dim());
    for _ in 0..count {
        cluster.grow_from(origin, source)?;
    }
    Ok(())
}

/// Stack-driven growth with interleaved moves: up to `max_active` explorers
/// are in flight, and at every tick a uniformly chosen one makes one move
/// (or settles, if it stands on an unoccupied site). Explorers are launched
/// in the order of `starts`.
pub fn grow_interleaved(
    cluster: &mut Cluster,
    starts: &[Site],
    stacks: &mut InstructionStacks,
    scheduler: &mut RngStream,
    max_active: usize,
) -> Result<()> {
    let max_active = max_active.max(1);
    let mut pending = starts.iter().copied();
    let mut active: Vec<(Site, u64)> = Vec::with_capacity(max_active);
    loop {
        while active.len() < max_active {
            match pending.next() {
                Some(s) => active.push((s, 0)),
                None => break,
            }
        }
        if active.is_empty() {
            return Ok(());
        }
        let pick = scheduler.below(active.len() as u64) as usize;
        let (pos, steps) = active[pick];
        if cluster.contains(&pos) {
            let budget = cluster.step_budget();
            if steps >= budget.0 {
                return Err(IdlaError::BudgetExceeded {
                    budget: budget.0,
                    start: pos,
                    position: pos,
                });
            }
            let dir = stacks.pop(&pos);
            active[pick] = (pos.neighbor(dir), steps + 1);
        } else {
            cluster.add_settled(pos)?;
            active.swap_remove(pick);
        }
    }
}

/// Explorers of one wave that settled inside the ball, and those stopped on
/// its outer boundary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StoppedWave {
    pub settled: Vec<Site>,
    pub stopped: ParticleConfig,
}

/// Walks one explorer until it settles inside `radius` or first stands at
/// norm `>= radius`. Returns the final site and whether it settled.
fn explore_within<S: DirectionSource + ?Sized>(
    cluster: &Cluster,
    start: Site,
    radius: Radius,
    source: &mut S,
    budget: StepBudget,
    mut on_visit: impl FnMut(&Site),
) -> Result<(Site, bool)> {
    let mut pos = start;
    let mut norm2 = pos.norm2();
    let mut steps = 0u64;
    loop {
        on_visit(&pos);
        if !radius.holds(norm2) {
            return Ok((pos, false));
        }
        if !cluster.contains(&pos) {
            return Ok((pos, true));
        }
        if steps >= budget.0 {
            return Err(IdlaError::BudgetExceeded {
                budget: budget.0,
                start,
                position: pos,
            });
        }
        let dir = source.next_direction(&pos);
        norm2 = pos.norm2_after_step(norm2, dir);
        pos.step(dir);
        steps += 1;
    }
}

fn wave_budget(cluster: &Cluster, radius: Radius) -> StepBudget {
    StepBudget::for_radius(cluster.budget_factor(), radius.value())
}

fn check_wave_radius(radius: Radius) -> Result<()> {
    if radius.value().is_nan() || radius.value() < 0.0 {
        return Err(IdlaError::domain("wave radius must be nonnegative"));
    }
    Ok(())
}

/// Sends `starts` as one wave: explorers settle in the cluster while inside
/// `𝔹(0, radius)`, or are stopped at their first site of norm `>= radius`.
/// Settled sites are added to `cluster`.
pub fn stop_wave<S: DirectionSource + ?Sized>(
    cluster: &mut Cluster,
    starts: &ParticleConfig,
    radius: Radius,
    source: &mut S,
) -> Result<StoppedWave> {
    check_wave_radius(radius)?;
    let budget = wave_budget(cluster, radius);
    let mut wave = StoppedWave::default();
    for start in starts.launch_order() {
        let (site, settled) = explore_within(cluster, start, radius, source, budget, |_| {})?;
        if settled {
            cluster.add_settled(site)?;
            wave.settled.push(site);
        } else {
            wave.stopped.add(site, 1);
        }
    }
    Ok(wave)
}

/// Full record of one exploration wave.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveOutcome {
    pub radius: Radius,
    pub launched: u64,
    /// Sites where explorers settled, all inside `𝔹(0, radius)`.
    pub settled: BTreeSet<Site>,
    /// Explorers stopped on `∂𝔹(0, radius)`.
    pub stopped: ParticleConfig,
    /// Explorers visiting each site before leaving the ball; on the
    /// boundary, explorers stopped there.
    pub visits: BTreeMap<Site, u64>,
    /// Same count for the coupled unrestricted walks: they follow the
    /// explorer's path and keep walking after it settles, until they leave
    /// the ball. On the boundary this is the exit count.
    pub free_exits: BTreeMap<Site, u64>,
}

impl WaveOutcome {
    pub fn visits_at(&self, site: &Site) -> u64 {
        self.visits.get(site).copied().unwrap_or(0)
    }

    pub fn free_exits_at(&self, site: &Site) -> u64 {
        self.free_exits.get(site).copied().unwrap_or(0)
    }
}

/// [`stop_wave`] with visit counters for explorers and for the coupled free
/// walks. A free walk continues past its explorer's settling site with
/// moves drawn from `continuation`.
pub fn wave_run<S: DirectionSource + ?Sized>(
    cluster: &mut Cluster,
    starts: &ParticleConfig,
    radius: Radius,
    source: &mut S,
    continuation: &mut RngStream,
) -> Result<WaveOutcome> {
    check_wave_radius(radius)?;
    let budget = wave_budget(cluster, radius);
    let mut out = WaveOutcome {
        radius,
        launched: 0,
        settled: BTreeSet::new(),
        stopped: ParticleConfig::new(),
        visits: BTreeMap::new(),
        free_exits: BTreeMap::new(),
    };
    let mut seen = HashSet::new();
    for start in starts.launch_order() {
        out.launched += 1;
        seen.clear();
        let (site, settled) = explore_within(cluster, start, radius, source, budget, |s| {
            seen.insert(*s);
        })?;
        for s in &seen {
            *out.visits.entry(*s).or_insert(0) += 1;
        }
        if settled {
            cluster.add_settled(site)?;
            out.settled.insert(site);
            let mut pos = site;
            let mut norm2 = pos.norm2();
            let mut steps = 0u64;
            while radius.holds(norm2) {
                if steps >= budget.0 {
                    return Err(IdlaError::BudgetExceeded {
                        budget: budget.0,
                        start: site,
                        position: pos,
                    });
                }
                let dir = continuation.direction(pos.dim());
                norm2 = pos.norm2_after_step(norm2, dir);
                pos.step(dir);
                steps += 1;
                seen.insert(pos);
            }
        } else {
            out.stopped.add(site, 1);
        }
        for s in &seen {
            *out.free_exits.entry(*s).or_insert(0) += 1;
        }
    }
    Ok(out)
}

/// Builds `A(∅, (n+m)δ₀)` in three waves: `n` explorers from the origin;
/// `m` green explorers stopped on `∂𝔹(0, radius)`; release of the stopped
/// configuration.
pub fn three_wave_build<S: DirectionSource + ?Sized>(
    dim: usize,
    n: u64,
    m: u64,
    radius: Radius,
    source: &mut S,
) -> Result<Cluster> {
    if !(radius.value() > 0.0) {
        return Err(IdlaError::domain("three-wave radius must be > 0"));
    }
    let mut cluster = Cluster::with_radius(dim, radius.value())?;
    grow_from_origin(&mut cluster, n, source)?;
    let green = ParticleConfig::point(Site::origin(dim), m);
    let wave = stop_wave(&mut cluster, &green, radius, source)?;
    grow_sequential(&mut cluster, &wave.stopped, source)?;
    Ok(cluster)
}

/// A Poisson(`lambda`) draw.
pub fn poisson_sample(lambda: f64, rng: &mut RngStream) -> Result<u64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(IdlaError::domain(format!(
            "Poisson mean must be finite and >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda).map_err(|e| IdlaError::Numeric(e.to_string()))?;
    Ok(dist.sample(rng) as u64)
}

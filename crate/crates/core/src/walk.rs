//! Simple random walks on `Z^d` and their randomness.
//!
//! Two sources drive a walk:
//!
//! * [`RngStream`]: a seeded ChaCha8 stream (`seed`, `stream_id`). Distinct
//!   stream ids give independent streams; replicas and walkers get their own.
//! * [`InstructionStacks`]: one infinite, pre-determined sequence of moves per
//!   site, read off a keyed counter-based generator. A walk standing at `x`
//!   pops the next unread instruction of `x`'s stack. With shared stacks the
//!   final aggregate is a deterministic function of the stacks, whatever the
//!   launch order, so order invariance can be tested sample by sample.

use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{IdlaError, Result};
use crate::geometry::{BallSpec, Radius, Site, SiteSet};

/// SplitMix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bits needed to encode a direction among `2·dim`.
#[inline]
fn direction_bits(dim: usize) -> u32 {
    usize::BITS - (2 * dim - 1).leading_zeros()
}

/// Seeded, reproducible random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    buffer: u64,
    buffered: u32,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
            buffer: 0,
            buffered: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream keyed by `(seed, stream_id, index)`. Depends only on the
    /// key, not on how much of `self` has been consumed.
    pub fn derive(&self, index: u64) -> RngStream {
        RngStream::new(self.seed, mix64(self.stream_id ^ mix64(index ^ 0xD1B5_4A32_D192_ED03)))
    }

    /// Uniform direction in `0..2·dim`, by rejection on buffered bits.
    #[inline]
    pub fn direction(&mut self, dim: usize) -> usize {
        let bits = direction_bits(dim);
        let mask = (1u64 << bits) - 1;
        let moves = 2 * dim as u64;
        loop {
            if self.buffered < bits {
                self.buffer = self.rng.next_u64();
                self.buffered = 64;
            }
            let v = self.buffer & mask;
            self.buffer >>= bits;
            self.buffered -= bits;
            if v < moves {
                return v as usize;
            }
        }
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// The instruction at position `index` of the stack at `site`.
#[inline]
pub fn stack_instruction(seed: u64, site: &Site, index: u64) -> usize {
    let mut h = mix64(seed ^ 0x2545_F491_4F6C_DD1D);
    for &c in site.coords() {
        h = mix64(h ^ (c as u32 as u64));
    }
    let r = mix64(mix64(h ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    ((r as u128 * (2 * site.dim()) as u128) >> 64) as usize
}

/// Site-indexed move stacks with per-site read counters.
///
/// Instructions are generated on demand, so memory is one counter per
/// visited site. The instruction function itself is pure; only the counters
/// are mutable.
#[derive(Clone, Debug)]
pub struct InstructionStacks {
    seed: u64,
    popped: HashMap<Site, u64>,
}

impl InstructionStacks {
    pub fn new(seed: u64) -> InstructionStacks {
        InstructionStacks {
            seed,
            popped: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn instruction(&self, site: &Site, index: u64) -> usize {
        stack_instruction(self.seed, site, index)
    }

    pub fn pop(&mut self, site: &Site) -> usize {
        let counter = self.popped.entry(*site).or_insert(0);
        let dir = stack_instruction(self.seed, site, *counter);
        *counter += 1;
        dir
    }

    pub fn popped(&self, site: &Site) -> u64 {
        self.popped.get(site).copied().unwrap_or(0)
    }

    pub fn total_popped(&self) -> u64 {
        self.popped.values().sum()
    }

    /// Read counters of every touched site.
    pub fn counters(&self) -> &HashMap<Site, u64> {
        &self.popped
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WalkMode {
    Free,
    Stack,
}

/// Where a walk's next move comes from.
pub trait DirectionSource {
    fn mode(&self) -> WalkMode;

    /// Next move for a walker standing at `at`.
    fn next_direction(&mut self, at: &Site) -> usize;
}

impl DirectionSource for RngStream {
    fn mode(&self) -> WalkMode {
        WalkMode::Free
    }

    #[inline]
    fn next_direction(&mut self, at: &Site) -> usize {
        self.direction(at.dim())
    }
}

impl DirectionSource for InstructionStacks {
    fn mode(&self) -> WalkMode {
        WalkMode::Stack
    }

    #[inline]
    fn next_direction(&mut self, at: &Site) -> usize {
        self.pop(at)
    }
}

impl<T: DirectionSource + ?Sized> DirectionSource for &mut T {
    fn mode(&self) -> WalkMode {
        (**self).mode()
    }

    #[inline]
    fn next_direction(&mut self, at: &Site) -> usize {
        (**self).next_direction(at)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkState {
    pub position: Site,
    pub steps_taken: u64,
    pub mode: WalkMode,
}

impl WalkState {
    pub fn new(position: Site, mode: WalkMode) -> WalkState {
        WalkState {
            position,
            steps_taken: 0,
            mode,
        }
    }
}

/// One nearest-neighbour move.
#[inline]
pub fn step<S: DirectionSource>(state: &mut WalkState, source: &mut S) {
    let dir = source.next_direction(&state.position);
    state.position.step(dir);
    state.steps_taken += 1;
}

/// Maximum number of steps a single walk may take.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepBudget(pub u64);

impl StepBudget {
    pub const DEFAULT_FACTOR: f64 = 1e4;

    /// `factor · diameter²`, with the diameter floored at 1.
    pub fn for_diameter(factor: f64, diameter: f64) -> StepBudget {
        let d = diameter.max(1.0);
        let steps = factor * d * d;
        StepBudget(if steps >= u64::MAX as f64 {
            u64::MAX
        } else {
            steps.max(1.0) as u64
        })
    }

    /// Budget for walks confined to the origin ball of radius `radius`.
    pub fn for_radius(factor: f64, radius: f64) -> StepBudget {
        StepBudget::for_diameter(factor, 2.0 * radius + 2.0)
    }

    fn exceeded(self, start: Site, position: Site) -> IdlaError {
        IdlaError::BudgetExceeded {
            budget: self.0,
            start,
            position,
        }
    }
}

/// Walks from `start` until the first position outside `region`.
/// Returns that position and the number of steps; `(start, 0)` if `start`
/// is already outside.
pub fn run_until_exit<R, S>(start: Site, region: &R, source: &mut S, budget: StepBudget) -> Result<(Site, u64)>
where
    R: SiteSet + ?Sized,
    S: DirectionSource + ?Sized,
{
    let mut state = WalkState::new(start, source.mode());
    while region.contains_site(&state.position) {
        if state.steps_taken >= budget.0 {
            return Err(budget.exceeded(start, state.position));
        }
        let dir = source.next_direction(&state.position);
        state.position.step(dir);
        state.steps_taken += 1;
    }
    Ok((state.position, state.steps_taken))
}

/// First exit from the origin-centred ball of `radius`, with incremental norms.
pub fn exit_origin_ball<S: DirectionSource + ?Sized>(
    start: Site,
    radius: Radius,
    source: &mut S,
    budget: StepBudget,
) -> Result<(Site, u64)> {
    let mut pos = start;
    let mut norm2 = pos.norm2();
    let mut steps = 0u64;
    while radius.holds(norm2) {
        if steps >= budget.0 {
            return Err(budget.exceeded(start, pos));
        }
        let dir = source.next_direction(&pos);
        norm2 = pos.norm2_after_step(norm2, dir);
        pos.step(dir);
        steps += 1;
    }
    Ok((pos, steps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HitOutcome {
    Hit { steps: u64 },
    Escaped { site: Site, steps: u64 },
}

impl HitOutcome {
    pub fn is_hit(&self) -> bool {
        matches!(self, HitOutcome::Hit { .. })
    }
}

/// Walks from `start` until it stands on `target` (hit) or leaves `region`
/// (escaped). Starting on `target` is a hit with no steps; arriving on
/// `target` by the step that leaves `region` counts as escaped.
pub fn run_until_hit_or_exit<R, S>(
    start: Site,
    target: Site,
    region: &R,
    source: &mut S,
    budget: StepBudget,
) -> Result<HitOutcome>
where
    R: SiteSet + ?Sized,
    S: DirectionSource + ?Sized,
{
    if start == target {
        return Ok(HitOutcome::Hit { steps: 0 });
    }
    let mut pos = start;
    let mut steps = 0u64;
    loop {
        if !region.contains_site(&pos) {
            return Ok(HitOutcome::Escaped { site: pos, steps });
        }
        if pos == target {
            return Ok(HitOutcome::Hit { steps });
        }
        if steps >= budget.0 {
            return Err(budget.exceeded(start, pos));
        }
        let dir = source.next_direction(&pos);
        pos.step(dir);
        steps += 1;
    }
}

/// [`run_until_hit_or_exit`] specialised to a ball region, tracking the
/// squared distance to the centre incrementally.
pub fn hit_before_leaving_ball<S: DirectionSource + ?Sized>(
    start: Site,
    target: Site,
    ball: &BallSpec,
    source: &mut S,
    budget: StepBudget,
) -> Result<HitOutcome> {
    if start == target {
        return Ok(HitOutcome::Hit { steps: 0 });
    }
    let mut pos = start;
    let mut rel = start.sub(&ball.center);
    let mut d2 = rel.norm2();
    let mut steps = 0u64;
    loop {
        if !ball.radius.holds(d2) {
            return Ok(HitOutcome::Escaped { site: pos, steps });
        }
        if pos == target {
            return Ok(HitOutcome::Hit { steps });
        }
        if steps >= budget.0 {
            return Err(budget.exceeded(start, pos));
        }
        let dir = source.next_direction(&pos);
        d2 = rel.norm2_after_step(d2, dir);
        rel.step(dir);
        pos.step(dir);
        steps += 1;
    }
}

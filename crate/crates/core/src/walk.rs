//! Simple random walks with reproducible per-particle random streams.
//!
//! Every logical walk (trial, particle) owns an [`RngStream`]: a ChaCha8
//! generator keyed by the master seed and positioned on its own 64-bit stream
//! id, so a walk can be replayed bit-for-bit in isolation and parallel trials
//! never share state.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Ball, BallGraph, Gasket, GraphFamily};
use crate::lattice::Vertex;

pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
    bits: u64,
    nbits: u32,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        RngStream { master_seed, stream_index, rng, bits: 0, nbits: 0 }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Uniform integer in `0..n`. Power-of-two ranges consume buffered bits,
    /// so a degree-4 step costs two bits of the stream.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        if n.is_power_of_two() {
            let k = n.trailing_zeros();
            if k == 0 {
                return 0;
            }
            if self.nbits < k {
                self.bits = self.rng.next_u64();
                self.nbits = 64;
            }
            let r = (self.bits & ((1u64 << k) - 1)) as usize;
            self.bits >>= k;
            self.nbits -= k;
            r
        } else {
            self.rng.random_range(0..n)
        }
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

/// Hands out consecutive streams of one master seed.
#[derive(Debug, Clone)]
pub struct StreamSource {
    master_seed: u64,
    next: u64,
}

impl StreamSource {
    pub fn new(master_seed: u64) -> Self {
        StreamSource { master_seed, next: 0 }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn streams_used(&self) -> u64 {
        self.next
    }

    pub fn next_stream(&mut self) -> RngStream {
        let s = RngStream::new(self.master_seed, self.next);
        self.next += 1;
        s
    }
}

/// SplitMix64 finalizer, used to derive row seeds from a master seed.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th independent job under a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix_seed(master ^ mix_seed(index))
}

pub fn step(family: &GraphFamily, v: Vertex, rng: &mut RngStream) -> Result<Vertex> {
    let nb = family.neighbors(v)?;
    Ok(nb[rng.below(nb.len())])
}

/// One step on an indexed ball; may return [`crate::graph::OUTSIDE`] from the
/// outermost layer.
#[inline]
pub fn step_index(graph: &BallGraph, i: u32, rng: &mut RngStream) -> u32 {
    let nb = graph.neighbors(i);
    nb[rng.below(nb.len())]
}

#[derive(Debug, Clone)]
pub enum StopRule {
    /// First time in the inner boundary of the ball or outside it.
    HitBoundary(Arc<Ball>),
    HitVertex(Vertex),
    /// First time outside the set.
    ExitSet(Arc<HashSet<Vertex>>),
    /// Whichever sub-rule fires first; ties go to the earliest listed rule.
    FirstOf(Vec<StopRule>),
}

impl StopRule {
    pub fn fires(&self, v: Vertex) -> bool {
        match self {
            StopRule::HitBoundary(ball) => !ball.contains(v) || ball.is_inner_boundary(v),
            StopRule::HitVertex(z) => *z == v,
            StopRule::ExitSet(set) => !set.contains(&v),
            StopRule::FirstOf(rules) => rules.iter().any(|r| r.fires(v)),
        }
    }

    fn tag(&self, v: Vertex) -> Option<usize> {
        match self {
            StopRule::FirstOf(rules) => rules.iter().position(|r| r.fires(v)),
            other => other.fires(v).then_some(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopOutcome {
    pub final_vertex: Vertex,
    pub steps: u64,
    /// Index of the sub-rule that fired (0 unless the rule is `FirstOf`).
    pub fired: usize,
}

/// Walks from `start` until `rule` fires (checked at time 0 as well).
pub fn run_until(
    family: &GraphFamily,
    start: Vertex,
    rule: &StopRule,
    rng: &mut RngStream,
    step_cap: u64,
) -> Result<StopOutcome> {
    if !family.contains(start) {
        return Err(Error::Address(start.to_string()));
    }
    let mut v = start;
    let mut steps = 0u64;
    loop {
        if let Some(fired) = rule.tag(v) {
            return Ok(StopOutcome { final_vertex: v, steps, fired });
        }
        if steps >= step_cap {
            return Err(Error::StepCap(step_cap));
        }
        let nb = family.neighbors_unchecked(v);
        v = nb[rng.below(nb.len())];
        steps += 1;
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate { mean, stderr: (var / n).sqrt(), trials: samples.len() as u64 }
    }

    /// `|mean - exact|` in units of the standard error (0 if both vanish).
    pub fn z_score(&self, exact: f64) -> f64 {
        let d = (self.mean - exact).abs();
        if self.stderr == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / self.stderr
        }
    }
}

/// Stop flags for `tau(n)`: inner boundary of `B(n)` or beyond.
pub(crate) fn tau_flags(graph: &BallGraph, n: u32) -> Vec<bool> {
    (0..graph.len() as u32).map(|i| graph.dist(i) > n || graph.is_inner_boundary(i, n)).collect()
}

/// Steps until a flagged vertex is reached, starting at index `start`.
pub(crate) fn steps_until_flag(
    graph: &BallGraph,
    start: u32,
    stop: &[bool],
    rng: &mut RngStream,
    step_cap: u64,
) -> Result<u64> {
    let mut i = start;
    let mut steps = 0u64;
    while !stop[i as usize] {
        if steps >= step_cap {
            return Err(Error::StepCap(step_cap));
        }
        i = step_index(graph, i, rng);
        steps += 1;
    }
    Ok(steps)
}

pub(crate) fn parallel_trials<F>(trials: u64, seed: u64, f: F) -> Result<Estimate>
where
    F: Fn(&mut RngStream) -> Result<f64> + Sync,
{
    if trials == 0 {
        return Err(Error::domain("at least one trial is required"));
    }
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| f(&mut RngStream::new(seed, t)))
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&samples))
}

pub(crate) fn index_in(graph: &BallGraph, v: Vertex, n: u32) -> Result<u32> {
    match graph.index_of(v) {
        Some(i) if graph.dist(i) <= n => Ok(i),
        _ => Err(Error::OutsideBall(v)),
    }
}

/// Monte Carlo estimate of `E_x tau(n)` for the ball `B_origin(n)`.
pub fn estimate_exit_time(gasket: &Gasket, x: Vertex, n: u32, trials: u64, seed: u64) -> Result<Estimate> {
    let graph = gasket.origin_graph(n + 1);
    exit_time_on(&graph, x, n, trials, seed)
}

/// Monte Carlo estimate of `E_x tau_x(n)`, the exit time of the ball centred at `x`.
pub fn estimate_exit_time_centered(
    family: &GraphFamily,
    x: Vertex,
    n: u32,
    trials: u64,
    seed: u64,
) -> Result<Estimate> {
    let graph = BallGraph::build(family, x, n + 1)?;
    exit_time_on(&graph, x, n, trials, seed)
}

fn exit_time_on(graph: &BallGraph, x: Vertex, n: u32, trials: u64, seed: u64) -> Result<Estimate> {
    let start = index_in(graph, x, n)?;
    let stop = tau_flags(graph, n);
    parallel_trials(trials, seed, |rng| {
        steps_until_flag(graph, start, &stop, rng, DEFAULT_STEP_CAP).map(|s| s as f64)
    })
}

/// Whether a walk from `start` visits `z` before `tau(n)`; `start == z` counts.
pub fn hit_before_boundary(gasket: &Gasket, start: Vertex, z: Vertex, n: u32, rng: &mut RngStream) -> Result<bool> {
    let graph = gasket.origin_graph(n + 1);
    let s = index_in(&graph, start, n)?;
    let zi = index_in(&graph, z, n)?;
    let stop = tau_flags(&graph, n);
    hit_before_flag(&graph, s, zi, &stop, rng, DEFAULT_STEP_CAP)
}

pub(crate) fn hit_before_flag(
    graph: &BallGraph,
    start: u32,
    z: u32,
    stop: &[bool],
    rng: &mut RngStream,
    step_cap: u64,
) -> Result<bool> {
    let mut i = start;
    let mut steps = 0u64;
    loop {
        if i == z {
            return Ok(true);
        }
        if stop[i as usize] {
            return Ok(false);
        }
        if steps >= step_cap {
            return Err(Error::StepCap(step_cap));
        }
        i = step_index(graph, i, rng);
        steps += 1;
    }
}

/// Monte Carlo estimate of `P_start(tau_z < tau(n))`.
pub fn estimate_hit_probability(
    gasket: &Gasket,
    start: Vertex,
    z: Vertex,
    n: u32,
    trials: u64,
    seed: u64,
) -> Result<Estimate> {
    let graph = gasket.origin_graph(n + 1);
    let s = index_in(&graph, start, n)?;
    let zi = index_in(&graph, z, n)?;
    let stop = tau_flags(&graph, n);
    parallel_trials(trials, seed, |rng| {
        hit_before_flag(&graph, s, zi, &stop, rng, DEFAULT_STEP_CAP).map(|h| if h { 1.0 } else { 0.0 })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<usize> = (0..100).map(|_| a.below(4)).collect();
        let xb: Vec<usize> = (0..100).map(|_| b.below(4)).collect();
        let xc: Vec<usize> = (0..100).map(|_| c.below(4)).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn below_handles_general_ranges() {
        let mut r = RngStream::new(1, 0);
        for n in 1..20 {
            for _ in 0..50 {
                assert!(r.below(n) < n);
            }
        }
    }

    #[test]
    fn one_step_leaves_the_unit_ball() {
        let g = Gasket::doubled();
        let rule = StopRule::HitBoundary(Arc::new(g.ball(Vertex::ORIGIN, 1).unwrap()));
        let mut rng = RngStream::new(11, 0);
        for _ in 0..100 {
            let out = run_until(g.family(), Vertex::ORIGIN, &rule, &mut rng, DEFAULT_STEP_CAP).unwrap();
            assert_eq!(out.steps, 1);
        }
    }

    #[test]
    fn run_until_checks_time_zero() {
        let g = Gasket::doubled();
        let mut rng = RngStream::new(0, 0);
        let out = run_until(g.family(), Vertex::ORIGIN, &StopRule::HitVertex(Vertex::ORIGIN), &mut rng, 10).unwrap();
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn step_cap_is_an_error() {
        let g = Gasket::doubled();
        let mut rng = RngStream::new(0, 0);
        let far = StopRule::HitVertex(Vertex::right(1 << 20, 0));
        assert!(matches!(
            run_until(g.family(), Vertex::ORIGIN, &far, &mut rng, 1000),
            Err(Error::StepCap(1000))
        ));
    }

    #[test]
    fn trivial_hit_cases() {
        let g = Gasket::doubled();
        let mut rng = RngStream::new(5, 0);
        let z = Vertex::right(1, 1);
        assert!(hit_before_boundary(&g, z, z, 4, &mut rng).unwrap());
        let ball = g.ball(Vertex::ORIGIN, 4).unwrap();
        for &y in ball.inner_boundary() {
            if y != z {
                assert!(!hit_before_boundary(&g, y, z, 4, &mut rng).unwrap());
            }
        }
    }

    #[test]
    fn unit_exit_time_is_exact() {
        let g = Gasket::doubled();
        let e = estimate_exit_time(&g, Vertex::ORIGIN, 1, 50, 3).unwrap();
        assert_eq!((e.mean, e.stderr), (1.0, 0.0));
    }

    #[test]
    fn indexed_and_vertex_walks_agree() {
        let g = Gasket::doubled();
        let graph = g.origin_graph(40);
        let mut r1 = RngStream::new(99, 5);
        let mut r2 = RngStream::new(99, 5);
        let mut v = Vertex::ORIGIN;
        let mut i = 0u32;
        for _ in 0..500 {
            v = step(g.family(), v, &mut r1).unwrap();
            i = step_index(&graph, i, &mut r2);
            assert_eq!(graph.vertex(i), v);
        }
    }
}

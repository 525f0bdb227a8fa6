//! Internal DLA: direct and stopped growth, visit counters, inclusion radii.
//!
//! Clusters are dense bitmaps over the shared BFS index around the origin.
//! The index always extends at least one layer past the farthest occupied
//! site, so a walk inside the cluster never leaves it.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::constants::ALPHA;
use crate::error::{Error, Result};
use crate::fluctuations::{chi_square_two_sample, ChiSquareTest};
use crate::graph::{BallGraph, Gasket};
use crate::lattice::Vertex;
use crate::walk::{
    derive_seed, hit_before_flag, index_in, parallel_trials, step_index, tau_flags, Estimate, RngStream,
    StreamSource, DEFAULT_STEP_CAP,
};

#[derive(Debug, Clone)]
pub struct Cluster {
    graph: Arc<BallGraph>,
    occupied: Vec<bool>,
    order: Vec<u32>,
    max_dist: u32,
}

impl Cluster {
    pub fn empty(gasket: &Gasket) -> Self {
        let graph = gasket.origin_graph(1);
        Cluster { occupied: vec![false; graph.len()], graph, order: Vec::new(), max_dist: 0 }
    }

    /// A cluster with the given sites, settled in the given order.
    pub fn from_vertices(gasket: &Gasket, vertices: &[Vertex]) -> Result<Self> {
        let mut c = Cluster::empty(gasket);
        for &v in vertices {
            let i = c.ensure_indexed(gasket, v)?;
            if !c.occupied[i as usize] {
                c.settle(gasket, i);
            }
        }
        Ok(c)
    }

    pub fn graph(&self) -> &Arc<BallGraph> {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn particle_count(&self) -> usize {
        self.order.len()
    }

    pub fn origin(&self) -> Vertex {
        Vertex::ORIGIN
    }

    pub fn contains(&self, v: Vertex) -> bool {
        self.graph.index_of(v).is_some_and(|i| self.occupied[i as usize])
    }

    pub(crate) fn contains_index(&self, i: u32) -> bool {
        self.occupied.get(i as usize).copied().unwrap_or(false)
    }

    /// Occupied sites in settling order.
    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.order.iter().map(|&i| self.graph.vertex(i))
    }

    /// Largest distance from the origin of an occupied site.
    pub fn max_distance(&self) -> u32 {
        self.max_dist
    }

    /// Whether the occupied set is connected (the empty set counts as connected).
    pub fn is_connected(&self) -> bool {
        let Some(&first) = self.order.first() else { return true };
        let mut seen = vec![false; self.graph.len()];
        seen[first as usize] = true;
        let mut stack = vec![first];
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &w in self.graph.neighbors(i) {
                if self.contains_index(w) && !seen[w as usize] {
                    seen[w as usize] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.order.len()
    }

    fn grow_index(&mut self, gasket: &Gasket, radius: u32) {
        if self.graph.radius() < radius {
            self.graph = gasket.origin_graph(radius);
            self.occupied.resize(self.graph.len(), false);
        }
    }

    fn ensure_indexed(&mut self, gasket: &Gasket, v: Vertex) -> Result<u32> {
        if !gasket.contains(v) {
            return Err(Error::Address(v.to_string()));
        }
        loop {
            if let Some(i) = self.graph.index_of(v) {
                if self.graph.dist(i) < self.graph.radius() {
                    return Ok(i);
                }
            }
            let r = self.graph.radius() * 2;
            self.grow_index(gasket, r);
        }
    }

    fn settle(&mut self, gasket: &Gasket, i: u32) {
        self.occupied[i as usize] = true;
        self.order.push(i);
        let d = self.graph.dist(i);
        self.max_dist = self.max_dist.max(d);
        if d + 1 >= self.graph.radius() {
            let r = self.graph.radius() * 2;
            self.grow_index(gasket, r);
        }
    }
}

enum Fate {
    Settled(u32),
    Paused(u32),
}

/// Walks from `start` until it leaves the cluster (settles) or leaves
/// `B(absorb)` first or simultaneously (pauses outside).
fn run_particle(cluster: &Cluster, start: u32, absorb: u32, rng: &mut RngStream) -> Result<Fate> {
    let g = &*cluster.graph;
    let mut i = start;
    let mut steps = 0u64;
    loop {
        let outside = g.dist(i) > absorb;
        if outside || !cluster.occupied[i as usize] {
            return Ok(if outside { Fate::Paused(i) } else { Fate::Settled(i) });
        }
        if steps >= DEFAULT_STEP_CAP {
            return Err(Error::StepCap(DEFAULT_STEP_CAP));
        }
        i = step_index(g, i, rng);
        steps += 1;
    }
}

/// Sequential IDLA with `particles` walkers from the origin; particle `i`
/// draws stream `i` of `streams`.
pub fn grow(gasket: &Gasket, particles: u64, streams: &mut StreamSource) -> Result<Cluster> {
    let mut c = Cluster::empty(gasket);
    for _ in 0..particles {
        let mut rng = streams.next_stream();
        match run_particle(&c, 0, u32::MAX, &mut rng)? {
            Fate::Settled(i) => c.settle(gasket, i),
            Fate::Paused(_) => unreachable!("unbounded absorbing set"),
        }
    }
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct StoppedState {
    pub cluster: Cluster,
    /// Positions of paused particles, each just outside the absorbing ball.
    pub paused: Vec<Vertex>,
    /// `None` means the whole graph.
    pub absorb_radius: Option<u32>,
}

impl StoppedState {
    pub fn new(cluster: Cluster) -> Self {
        StoppedState { cluster, paused: Vec::new(), absorb_radius: None }
    }

    pub fn empty(gasket: &Gasket) -> Self {
        Self::new(Cluster::empty(gasket))
    }

    pub fn launched(&self) -> usize {
        self.cluster.len() + self.paused.len()
    }
}

/// Launches particles from `sources` in order onto the current cluster,
/// stopping each on leaving `B(absorb_radius)`.
pub fn grow_stopped(
    gasket: &Gasket,
    state: StoppedState,
    sources: &[Vertex],
    absorb_radius: Option<u32>,
    streams: &mut StreamSource,
) -> Result<StoppedState> {
    let StoppedState { mut cluster, mut paused, .. } = state;
    let absorb = absorb_radius.unwrap_or(u32::MAX);
    if let Some(r) = absorb_radius {
        if cluster.max_distance() > r && !cluster.is_empty() {
            return Err(Error::domain(format!("cluster is not contained in the absorbing ball B({r})")));
        }
        cluster.grow_index(gasket, r + 2);
    }
    for &x in sources {
        let start = cluster.ensure_indexed(gasket, x)?;
        let mut rng = streams.next_stream();
        match run_particle(&cluster, start, absorb, &mut rng)? {
            Fate::Settled(i) => cluster.settle(gasket, i),
            Fate::Paused(i) => paused.push(cluster.graph.vertex(i)),
        }
    }
    Ok(StoppedState { cluster, paused, absorb_radius })
}

/// Relaunches every paused particle from where it stopped under a larger
/// absorbing ball (`None` runs them to settlement).
pub fn resume(
    gasket: &Gasket,
    state: StoppedState,
    new_absorb_radius: Option<u32>,
    streams: &mut StreamSource,
) -> Result<StoppedState> {
    match (state.absorb_radius, new_absorb_radius) {
        (None, Some(_)) => return Err(Error::domain("cannot shrink an unbounded absorbing set")),
        (Some(a), Some(b)) if b < a => {
            return Err(Error::domain(format!("new absorbing radius {b} is below the current {a}")))
        }
        _ => {}
    }
    if state.paused.is_empty() {
        return Ok(state);
    }
    let sources = state.paused.clone();
    let base = StoppedState { cluster: state.cluster, paused: Vec::new(), absorb_radius: state.absorb_radius };
    grow_stopped(gasket, base, &sources, new_absorb_radius, streams)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OuterStep {
    /// Absorbing radius `n_j`; `None` for the final unbounded stage.
    pub radius: Option<u32>,
    /// Particles paused at the end of the stage.
    pub paused: usize,
}

#[derive(Debug, Clone)]
pub struct OuterBoundRun {
    pub steps: Vec<OuterStep>,
    pub state: StoppedState,
}

/// Stops `b_n` particles at `B(n)`, then enlarges the absorbing radius by
/// `ceil(k_j^(1/α))` while `k_j > n_j^(1/(α+1))`, finally running the rest to
/// settlement.
pub fn outer_bound_iteration(gasket: &Gasket, n: u32, streams: &mut StreamSource) -> Result<OuterBoundRun> {
    let bn = gasket.ball_volume(n);
    let sources = vec![Vertex::ORIGIN; bn];
    let mut state = grow_stopped(gasket, StoppedState::empty(gasket), &sources, Some(n), streams)?;
    let mut steps = vec![OuterStep { radius: Some(n), paused: state.paused.len() }];
    let mut nj = n;
    loop {
        let k = state.paused.len();
        if k == 0 {
            break;
        }
        if (k as f64) > (nj as f64).powf(1.0 / (ALPHA + 1.0)) {
            nj += (k as f64).powf(1.0 / ALPHA).ceil() as u32;
            state = resume(gasket, state, Some(nj), streams)?;
            steps.push(OuterStep { radius: Some(nj), paused: state.paused.len() });
        } else {
            state = resume(gasket, state, None, streams)?;
            steps.push(OuterStep { radius: None, paused: state.paused.len() });
            break;
        }
    }
    Ok(OuterBoundRun { steps, state })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MlCount {
    /// Walks that visit `z` before `tau(n)`.
    pub m: u64,
    /// Walks whose first visit to `z` comes after their own settling and before `tau(n)`.
    pub l: u64,
    pub z_in_cluster: bool,
}

/// One IDLA run with `b_n` particles; each walk continues after settling
/// until `tau(n)` so the visit counters see the whole path.
pub fn ml_counters(gasket: &Gasket, n: u32, z: Vertex, streams: &mut StreamSource) -> Result<MlCount> {
    let og = gasket.origin_graph(n + 1);
    let zi = index_in(&og, z, n)?;
    let bn = og.volume(n);
    let mut c = Cluster::empty(gasket);
    c.grow_index(gasket, n + 1);
    let mut stop = tau_flags(&c.graph, n);
    let (mut m, mut l) = (0u64, 0u64);
    for _ in 0..bn {
        let mut rng = streams.next_stream();
        let mut i = 0u32;
        let (mut t, mut sigma, mut tau, mut tz) = (0u64, None, None, None);
        loop {
            if sigma.is_none() && !c.occupied[i as usize] {
                sigma = Some(t);
                c.settle(gasket, i);
                if stop.len() < c.graph.len() {
                    stop = tau_flags(&c.graph, n);
                }
            }
            if tz.is_none() && i == zi {
                tz = Some(t);
            }
            if tau.is_none() && stop[i as usize] {
                tau = Some(t);
            }
            if let (Some(s), Some(tt)) = (sigma, tau) {
                if let Some(hz) = tz.filter(|&hz| hz < tt) {
                    m += 1;
                    if s < hz {
                        l += 1;
                    }
                }
                break;
            }
            if t >= DEFAULT_STEP_CAP {
                return Err(Error::StepCap(DEFAULT_STEP_CAP));
            }
            i = step_index(&c.graph, i, &mut rng);
            t += 1;
        }
    }
    Ok(MlCount { m, l, z_in_cluster: c.contains_index(zi) })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MlSummary {
    pub m: Estimate,
    pub l: Estimate,
    pub runs: u64,
    pub m_below_l: u64,
    /// Runs with `z` outside the cluster but `M != L`.
    pub invariant_violations: u64,
}

/// `runs` independent [`ml_counters`] runs; run `r` uses the streams of
/// `derive_seed(seed, r)`.
pub fn ml_estimate(gasket: &Gasket, n: u32, z: Vertex, runs: u64, seed: u64) -> Result<MlSummary> {
    if runs == 0 {
        return Err(Error::domain("at least one run is required"));
    }
    let counts: Vec<MlCount> = (0..runs)
        .into_par_iter()
        .map(|r| ml_counters(gasket, n, z, &mut StreamSource::new(derive_seed(seed, r))))
        .collect::<Result<_>>()?;
    let ms: Vec<f64> = counts.iter().map(|c| c.m as f64).collect();
    let ls: Vec<f64> = counts.iter().map(|c| c.l as f64).collect();
    Ok(MlSummary {
        m: Estimate::from_samples(&ms),
        l: Estimate::from_samples(&ls),
        runs,
        m_below_l: counts.iter().filter(|c| c.m < c.l).count() as u64,
        invariant_violations: counts.iter().filter(|c| !c.z_in_cluster && c.m != c.l).count() as u64,
    })
}

/// Monte Carlo mean of `L~`: one independent walk from every `y ∈ B(n)`
/// per trial, counting those that hit `z` before `tau(n)`.
pub fn ltilde_estimate(gasket: &Gasket, n: u32, z: Vertex, trials: u64, seed: u64) -> Result<Estimate> {
    let g = gasket.origin_graph(n + 1);
    let zi = index_in(&g, z, n)?;
    let stop = tau_flags(&g, n);
    if stop[zi as usize] {
        return Err(Error::domain(format!("{z} lies on the inner boundary; g_n(z,z) = 0")));
    }
    let bn = g.volume(n) as u32;
    parallel_trials(trials, seed, |rng: &mut RngStream| {
        let mut hits = 0u64;
        for y in 0..bn {
            if hit_before_flag(&g, y, zi, &stop, rng, DEFAULT_STEP_CAP)? {
                hits += 1;
            }
        }
        Ok(hits as f64)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AbelianBin {
    pub inner_defect: i64,
    pub outer_excess: i64,
    pub direct: u64,
    pub stopped: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AbelianReport {
    pub n: u32,
    pub runs: u64,
    pub bins: Vec<AbelianBin>,
    pub test: ChiSquareTest,
}

impl AbelianReport {
    pub fn passed(&self, significance: f64) -> bool {
        self.test.p_value >= significance
    }
}

/// Compares the `(inner_defect, outer_excess)` law of `grow(b_n)` against
/// stopping all `b_n` particles at `B(n)` and then resuming them to
/// settlement. Run `r` draws `derive_seed(seed, 2r)` for the direct cluster
/// and `derive_seed(seed, 2r + 1)` for the stopped one.
pub fn abelian_test(gasket: &Gasket, n: u32, runs: u64, seed: u64) -> Result<AbelianReport> {
    if runs == 0 {
        return Err(Error::domain("at least one run is required"));
    }
    let bn = gasket.ball_volume(n);
    let sources = vec![Vertex::ORIGIN; bn];
    gasket.origin_graph(n + 2);
    let pairs: Vec<((i64, i64), (i64, i64))> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let direct = radii(&grow(gasket, bn as u64, &mut StreamSource::new(derive_seed(seed, 2 * r)))?)?;
            let mut streams = StreamSource::new(derive_seed(seed, 2 * r + 1));
            let stopped = grow_stopped(gasket, StoppedState::empty(gasket), &sources, Some(n), &mut streams)?;
            let stopped = radii(&resume(gasket, stopped, None, &mut streams)?.cluster)?;
            Ok(((direct.inner_defect, direct.outer_excess), (stopped.inner_defect, stopped.outer_excess)))
        })
        .collect::<Result<_>>()?;
    let mut a = BTreeMap::new();
    let mut b = BTreeMap::new();
    for (d, s) in pairs {
        *a.entry(d).or_insert(0u64) += 1;
        *b.entry(s).or_insert(0u64) += 1;
    }
    let test = chi_square_two_sample(&a, &b)?;
    let mut keys: Vec<_> = a.keys().chain(b.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let bins = keys
        .into_iter()
        .map(|k| AbelianBin {
            inner_defect: k.0,
            outer_excess: k.1,
            direct: a.get(&k).copied().unwrap_or(0),
            stopped: b.get(&k).copied().unwrap_or(0),
        })
        .collect();
    Ok(AbelianReport { n, runs, bins, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RadiusStats {
    /// Nominal radius: the largest `n` with `b_n <= particle_count`.
    pub n: u32,
    /// Whether `b_n` equals the particle count.
    pub exact: bool,
    pub r_in: i64,
    pub r_out: i64,
    pub inner_defect: i64,
    pub outer_excess: i64,
}

/// Inclusion radii: `B(r_in) ⊆ cluster ⊆ B(r_out)`, both extremal.
pub fn radii(cluster: &Cluster) -> Result<RadiusStats> {
    if cluster.is_empty() {
        return Err(Error::domain("radii of an empty cluster"));
    }
    let g = &cluster.graph;
    let count = cluster.len();
    let mut n = 0u32;
    while n < g.radius() && g.volume(n + 1) <= count {
        n += 1;
    }
    if g.volume(n) > count {
        return Err(Error::domain("cluster smaller than B(0)"));
    }
    let exact = g.volume(n) == count;
    let first_gap = (0..g.len() as u32).find(|&i| !cluster.occupied[i as usize]).expect("index extends past the cluster");
    let r_in = g.dist(first_gap) as i64 - 1;
    let r_out = cluster.max_distance() as i64;
    let n64 = n as i64;
    Ok(RadiusStats { n, exact, r_in, r_out, inner_defect: n64 - r_in, outer_excess: r_out - n64 })
}

/// Set-theoretic check of `B(r_in) ⊆ cluster ⊆ B(r_out)` against explicit balls.
pub fn verify_inclusions(gasket: &Gasket, cluster: &Cluster, stats: &RadiusStats) -> Result<bool> {
    if stats.r_in >= 0 {
        let inner = gasket.ball(Vertex::ORIGIN, stats.r_in as u32)?;
        if !inner.members().iter().all(|&v| cluster.contains(v)) {
            return Ok(false);
        }
    }
    let outer = gasket.ball(Vertex::ORIGIN, stats.r_out.max(0) as u32)?;
    Ok(cluster.vertices().all(|v| outer.contains(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_particle_settles_at_origin() {
        let g = Gasket::doubled();
        let c = grow(&g, 1, &mut StreamSource::new(1)).unwrap();
        assert_eq!(c.vertices().collect::<Vec<_>>(), vec![Vertex::ORIGIN]);
    }

    #[test]
    fn clusters_are_connected_and_counted() {
        let g = Gasket::doubled();
        for seed in 0..20 {
            let c = grow(&g, 300, &mut StreamSource::new(seed)).unwrap();
            assert_eq!(c.len(), 300);
            assert!(c.is_connected());
            let r = radii(&c).unwrap();
            assert!(r.r_in <= r.r_out);
            assert!(verify_inclusions(&g, &c, &r).unwrap());
        }
    }

    #[test]
    fn growth_is_reproducible() {
        let g = Gasket::doubled();
        let a: Vec<Vertex> = grow(&g, 200, &mut StreamSource::new(9)).unwrap().vertices().collect();
        let b: Vec<Vertex> = grow(&g, 200, &mut StreamSource::new(9)).unwrap().vertices().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn radii_of_exact_and_perturbed_balls() {
        let g = Gasket::doubled();
        let n = 8;
        let ball = g.ball(Vertex::ORIGIN, n).unwrap();
        let c = Cluster::from_vertices(&g, ball.members()).unwrap();
        let r = radii(&c).unwrap();
        assert_eq!((r.n, r.exact, r.r_in, r.r_out, r.inner_defect, r.outer_excess), (8, true, 8, 8, 0, 0));

        let y = ball.inner_boundary()[0];
        let w = g
            .neighbors(y)
            .unwrap()
            .into_iter()
            .find(|&w| !ball.contains(w))
            .unwrap();
        let mut members: Vec<Vertex> = ball.members().iter().copied().filter(|&v| v != y).collect();
        members.push(w);
        let r = radii(&Cluster::from_vertices(&g, &members).unwrap()).unwrap();
        assert_eq!((r.r_in, r.r_out), (n as i64 - 1, n as i64 + 1));

        let r = radii(&Cluster::from_vertices(&g, &ball.members()[..7]).unwrap()).unwrap();
        assert_eq!((r.n, r.exact), (1, false));
    }

    #[test]
    fn stopped_growth_basics() {
        let g = Gasket::doubled();
        let mut s = StreamSource::new(3);
        let st = grow_stopped(&g, StoppedState::empty(&g), &[Vertex::ORIGIN], Some(0), &mut s).unwrap();
        assert_eq!(st.cluster.vertices().collect::<Vec<_>>(), vec![Vertex::ORIGIN]);
        assert!(st.paused.is_empty());

        let full = Cluster::from_vertices(&g, g.ball(Vertex::ORIGIN, 4).unwrap().members()).unwrap();
        let st = grow_stopped(&g, StoppedState::new(full), &[Vertex::ORIGIN; 10], Some(4), &mut s).unwrap();
        assert_eq!(st.paused.len(), 10);
        assert_eq!(st.cluster.len(), g.ball_volume(4));
        for &p in &st.paused {
            assert_eq!(g.distance(Vertex::ORIGIN, p).unwrap(), 5);
        }
        let idle = grow_stopped(&g, StoppedState::empty(&g), &[], Some(2), &mut s).unwrap();
        let unchanged = resume(&g, idle, Some(3), &mut s).unwrap();
        assert!(unchanged.cluster.is_empty());
        assert_eq!(unchanged.absorb_radius, Some(2));
    }

    #[test]
    fn stopped_then_resumed_conserves_particles() {
        let g = Gasket::doubled();
        let mut s = StreamSource::new(5);
        let src = vec![Vertex::ORIGIN; 100];
        let st = grow_stopped(&g, StoppedState::empty(&g), &src, Some(5), &mut s).unwrap();
        assert_eq!(st.launched(), 100);
        assert!(st.cluster.max_distance() <= 5);
        let st = resume(&g, st, Some(7), &mut s).unwrap();
        assert_eq!(st.launched(), 100);
        let st = resume(&g, st, None, &mut s).unwrap();
        assert_eq!(st.cluster.len(), 100);
        assert!(st.paused.is_empty());
        assert!(st.cluster.is_connected());
        assert!(resume(&g, st, Some(3), &mut s).is_err());
    }

    #[test]
    fn outer_iteration_settles_everything() {
        let g = Gasket::doubled();
        let run = outer_bound_iteration(&g, 16, &mut StreamSource::new(8)).unwrap();
        assert_eq!(run.state.cluster.len(), g.ball_volume(16));
        assert!(run.state.paused.is_empty());
        assert_eq!(run.steps[0].radius, Some(16));
    }

    #[test]
    fn ml_counters_invariants() {
        let g = Gasket::doubled();
        let z = Vertex::right(2, 1);
        for seed in 0..200 {
            let c = ml_counters(&g, 8, z, &mut StreamSource::new(seed)).unwrap();
            assert!(c.m >= c.l);
            if !c.z_in_cluster {
                assert_eq!(c.m, c.l);
            }
        }
        assert!(ltilde_estimate(&g, 4, g.ball(Vertex::ORIGIN, 4).unwrap().inner_boundary()[0], 2, 0).is_err());
    }

    #[test]
    fn abelian_test_small() {
        let g = Gasket::doubled();
        let r = abelian_test(&g, 2, 2000, 9).unwrap();
        assert_eq!(r.bins.iter().map(|b| b.direct).sum::<u64>(), 2000);
        assert_eq!(r.bins.iter().map(|b| b.stopped).sum::<u64>(), 2000);
        assert!(r.passed(1e-3), "{:?}", r.test);
    }
}

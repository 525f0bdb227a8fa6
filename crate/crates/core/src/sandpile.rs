//! Divisible sandpile: toppling, stabilization, odometer audits.
//!
//! A site with mass `m > 1` topples by keeping 1 and sending `(m-1)/deg` to
//! each neighbor. The odometer counts everything a site has emitted. States
//! live on the prefix-stable BFS index around the origin and grow on demand.

use std::collections::BinaryHeap;
use std::cmp::Reverse;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constants::BETA;
use crate::error::{Error, Result};
use crate::graph::{BallGraph, Gasket, GraphFamily, OUTSIDE};
use crate::lattice::{LatticePoint, Side, Vertex};

pub const DEFAULT_TOL: f64 = 1e-9;
/// Default cap on individual topple operations.
pub const DEFAULT_TOPPLE_CAP: u64 = 20_000_000_000;

const INITIAL_RADIUS: u32 = 8;

#[derive(Debug, Clone)]
pub struct SandState {
    graph: Arc<BallGraph>,
    mass: Vec<f64>,
    odometer: Vec<f64>,
    total_mass: f64,
}

impl SandState {
    /// Initial distribution with finite support and zero odometer.
    pub fn new(family: &GraphFamily, mass0: impl IntoIterator<Item = (Vertex, f64)>) -> Result<Self> {
        let mass0: Vec<(Vertex, f64)> = mass0.into_iter().collect();
        for &(v, m) in &mass0 {
            if !family.contains(v) {
                return Err(Error::Address(v.to_string()));
            }
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::domain(format!("mass at {v} must be finite and nonnegative")));
            }
        }
        let mut graph = Arc::new(BallGraph::build(family, Vertex::ORIGIN, INITIAL_RADIUS)?);
        while mass0.iter().any(|&(v, _)| graph.index_of(v).is_none_or(|i| graph.dist(i) == graph.radius())) {
            graph = Arc::new(BallGraph::build(family, Vertex::ORIGIN, graph.radius() * 2)?);
        }
        let mut mass = vec![0.0; graph.len()];
        for &(v, m) in &mass0 {
            mass[graph.index_of(v).unwrap() as usize] += m;
        }
        let total_mass = mass.iter().sum();
        Ok(SandState { odometer: vec![0.0; graph.len()], graph, mass, total_mass })
    }

    /// Mass `m` at the origin.
    pub fn point_mass(family: &GraphFamily, m: f64) -> Result<Self> {
        Self::new(family, [(Vertex::ORIGIN, m)])
    }

    pub fn graph(&self) -> &Arc<BallGraph> {
        &self.graph
    }

    pub fn family(&self) -> &GraphFamily {
        self.graph.family()
    }

    pub fn mass(&self, v: Vertex) -> f64 {
        self.graph.index_of(v).map_or(0.0, |i| self.mass[i as usize])
    }

    pub fn odometer(&self, v: Vertex) -> f64 {
        self.graph.index_of(v).map_or(0.0, |i| self.odometer[i as usize])
    }

    /// Mass by graph index; sites beyond the index carry no mass.
    pub fn mass_at(&self, i: u32) -> f64 {
        self.mass.get(i as usize).copied().unwrap_or(0.0)
    }

    pub fn odometer_at(&self, i: u32) -> f64 {
        self.odometer.get(i as usize).copied().unwrap_or(0.0)
    }

    /// Total mass of the initial distribution.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Current sum of all site masses.
    pub fn mass_of(&self, v: Vertex) -> f64 {
        self.graph.index_of(v).map_or(0.0, |i| self.mass_at(i))
    }

    pub fn odometer_of(&self, v: Vertex) -> f64 {
        self.graph.index_of(v).map_or(0.0, |i| self.odometer_at(i))
    }

    pub fn current_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn max_excess(&self) -> f64 {
        self.mass.iter().map(|m| m - 1.0).fold(0.0, f64::max)
    }

    /// `(vertex, mass, odometer)` for sites with positive mass or odometer, BFS order.
    pub fn iter(&self) -> impl Iterator<Item = (Vertex, f64, f64)> + '_ {
        (0..self.graph.len())
            .filter(|&i| self.mass[i] > 0.0 || self.odometer[i] > 0.0)
            .map(|i| (self.graph.vertex(i as u32), self.mass[i], self.odometer[i]))
    }

    /// Sites classified as fully occupied: mass at least `1 - 1000·tol`.
    pub fn occupied(&self, tol: f64) -> Vec<Vertex> {
        let cut = 1.0 - 1e3 * tol;
        (0..self.graph.len()).filter(|&i| self.mass[i] >= cut).map(|i| self.graph.vertex(i as u32)).collect()
    }

    fn grow(&mut self) -> Result<()> {
        let r = self.graph.radius() * 2;
        let g = BallGraph::build(self.graph.family(), self.graph.center(), r)?;
        self.mass.resize(g.len(), 0.0);
        self.odometer.resize(g.len(), 0.0);
        self.graph = Arc::new(g);
        Ok(())
    }

    fn touches_edge(&self, i: u32) -> bool {
        self.graph.neighbors(i).contains(&OUTSIDE)
    }

    /// Topples site `i` by `e`, which must not exceed its excess.
    #[inline]
    fn emit(&mut self, i: u32, e: f64) {
        let nb = self.graph.neighbors(i);
        let share = e / nb.len() as f64;
        self.mass[i as usize] -= e;
        self.odometer[i as usize] += e;
        for &w in nb {
            self.mass[w as usize] += share;
        }
    }

    fn topple_index(&mut self, i: u32) -> Result<f64> {
        let e = self.mass[i as usize] - 1.0;
        if e <= 0.0 {
            return Ok(0.0);
        }
        if self.touches_edge(i) {
            self.grow()?;
        }
        self.emit(i, e);
        Ok(e)
    }

    /// `T_x`: emits the excess of `x`, if any, and returns the amount emitted.
    pub fn topple(&mut self, x: Vertex) -> Result<f64> {
        if !self.family().contains(x) {
            return Err(Error::Address(x.to_string()));
        }
        match self.graph.index_of(x) {
            Some(i) => self.topple_index(i),
            None => Ok(0.0),
        }
    }

    /// `max |μ(z) - μ0(z) - Δu(z)|` against the given initial distribution.
    pub fn laplacian_identity_error(&self, mass0: &SandState) -> f64 {
        (0..self.graph.len() as u32)
            .map(|i| {
                let nb = self.graph.neighbors(i);
                let inflow: f64 = nb
                    .iter()
                    .filter(|&&w| w != OUTSIDE)
                    .map(|&w| self.odometer[w as usize] / self.graph.degree(w) as f64)
                    .sum();
                let lap = inflow - self.odometer[i as usize];
                (self.mass[i as usize] - mass0.mass_at(i) - lap).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ToppleSchedule {
    /// Round-synchronous: every unstable site topples its excess at the start of the round.
    #[default]
    ParallelSweep,
    /// Always topple the site with the largest excess (ties to the smaller index).
    PriorityQueue,
    /// Sweep an explicit vertex list in order, repeatedly.
    FixedCycle(Vec<Vertex>),
}

impl ToppleSchedule {
    pub fn name(&self) -> &'static str {
        match self {
            ToppleSchedule::ParallelSweep => "parallel",
            ToppleSchedule::PriorityQueue => "priority",
            ToppleSchedule::FixedCycle(_) => "cycle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilizeStats {
    pub topples: u64,
    /// Rounds for the sweep, passes for the cycle, topples for the queue.
    pub iterations: u64,
    pub final_excess: f64,
}

/// Topples until every excess is at most `tol`.
pub fn stabilize(mass0: &SandState, schedule: &ToppleSchedule, tol: f64) -> Result<SandState> {
    stabilize_with_cap(mass0, schedule, tol, DEFAULT_TOPPLE_CAP).map(|(s, _)| s)
}

pub fn stabilize_with_cap(
    mass0: &SandState,
    schedule: &ToppleSchedule,
    tol: f64,
    topple_cap: u64,
) -> Result<(SandState, StabilizeStats)> {
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let mut s = mass0.clone();
    let stats = match schedule {
        ToppleSchedule::ParallelSweep => parallel_sweep(&mut s, tol, topple_cap)?,
        ToppleSchedule::PriorityQueue => priority_queue(&mut s, tol, topple_cap)?,
        ToppleSchedule::FixedCycle(order) => fixed_cycle(&mut s, order, tol, topple_cap)?,
    };
    Ok((s, stats))
}

fn parallel_sweep(s: &mut SandState, tol: f64, cap: u64) -> Result<StabilizeStats> {
    let mut active: Vec<u32> = (0..s.graph.len() as u32).filter(|&i| s.mass[i as usize] > 1.0).collect();
    let mut flagged = vec![false; s.graph.len()];
    let mut emissions: Vec<(u32, f64)> = Vec::new();
    let (mut topples, mut rounds) = (0u64, 0u64);
    loop {
        emissions.clear();
        let mut max_e = 0.0f64;
        for &i in &active {
            let e = s.mass[i as usize] - 1.0;
            if e > 0.0 {
                emissions.push((i, e));
                max_e = max_e.max(e);
            }
        }
        if max_e <= tol {
            return Ok(StabilizeStats { topples, iterations: rounds, final_excess: max_e });
        }
        if topples >= cap {
            return Err(Error::Convergence { iterations: topples, excess: max_e });
        }
        if emissions.iter().any(|&(i, _)| s.touches_edge(i)) {
            s.grow()?;
            flagged.resize(s.graph.len(), false);
        }
        for &(i, e) in &emissions {
            s.emit(i, e);
        }
        topples += emissions.len() as u64;
        rounds += 1;
        active.clear();
        for &(i, _) in &emissions {
            for &j in std::iter::once(&i).chain(s.graph.neighbors(i)) {
                if !flagged[j as usize] && s.mass[j as usize] > 1.0 {
                    flagged[j as usize] = true;
                    active.push(j);
                }
            }
        }
        active.sort_unstable();
        for &j in &active {
            flagged[j as usize] = false;
        }
    }
}

// Positive f64 values order like their bit patterns.
fn key(e: f64) -> u64 {
    e.to_bits()
}

fn priority_queue(s: &mut SandState, tol: f64, cap: u64) -> Result<StabilizeStats> {
    let mut heap: BinaryHeap<(u64, Reverse<u32>)> = (0..s.graph.len() as u32)
        .filter(|&i| s.mass[i as usize] > 1.0)
        .map(|i| (key(s.mass[i as usize] - 1.0), Reverse(i)))
        .collect();
    let mut topples = 0u64;
    while let Some(&(k, Reverse(i))) = heap.peek() {
        let e = s.mass[i as usize] - 1.0;
        if e <= 0.0 || key(e) != k {
            heap.pop();
            continue;
        }
        if e <= tol {
            return Ok(StabilizeStats { topples, iterations: topples, final_excess: e });
        }
        if topples >= cap {
            return Err(Error::Convergence { iterations: topples, excess: e });
        }
        heap.pop();
        s.topple_index(i)?;
        topples += 1;
        for &w in s.graph.neighbors(i) {
            let ew = s.mass[w as usize] - 1.0;
            if ew > 0.0 {
                heap.push((key(ew), Reverse(w)));
            }
        }
    }
    Ok(StabilizeStats { topples, iterations: topples, final_excess: 0.0 })
}

fn fixed_cycle(s: &mut SandState, order: &[Vertex], tol: f64, cap: u64) -> Result<StabilizeStats> {
    if order.is_empty() {
        return Err(Error::domain("fixed cycle must list at least one vertex"));
    }
    for &v in order {
        if !s.family().contains(v) {
            return Err(Error::Address(v.to_string()));
        }
    }
    let (mut topples, mut passes) = (0u64, 0u64);
    loop {
        let excess = s.max_excess();
        if excess <= tol {
            return Ok(StabilizeStats { topples, iterations: passes, final_excess: excess });
        }
        if topples >= cap {
            return Err(Error::Convergence { iterations: topples, excess });
        }
        let mut any = false;
        for &v in order {
            if s.topple(v)? > 0.0 {
                topples += 1;
                any = true;
            }
        }
        if !any {
            // the unstable sites are not on the cycle and never will be
            return Err(Error::Convergence { iterations: topples, excess });
        }
        passes += 1;
    }
}

/// Stabilization precision used by [`abelian_check`], relative to its `tol`.
pub const ABELIAN_REFINEMENT: f64 = 1e-3;

/// Largest sup-norm distance between the odometers of any two schedules.
///
/// Each schedule runs to excess `tol · ABELIAN_REFINEMENT`: stopping at
/// excess `tol` leaves an odometer error of order `E τ · tol`, which would
/// swamp a comparison at the scale of `tol`.
pub fn abelian_check(mass0: &SandState, schedules: &[ToppleSchedule], tol: f64) -> Result<f64> {
    let inner = tol * ABELIAN_REFINEMENT;
    let finals: Vec<SandState> = schedules.iter().map(|sch| stabilize(mass0, sch, inner)).collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for a in 0..finals.len() {
        for b in a + 1..finals.len() {
            let (x, y) = (&finals[a], &finals[b]);
            let len = x.graph.len().max(y.graph.len()) as u32;
            for i in 0..len {
                worst = worst.max((x.odometer_at(i) - y.odometer_at(i)).abs());
            }
        }
    }
    Ok(worst)
}

/// The 120° rotation of `V_k` about its centre hole, in lattice coordinates:
/// `(a, b) ↦ (2^k - a - b, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationMap {
    pub k: u32,
    /// Number of applications of the basic rotation, taken mod 3.
    pub power: u8,
}

impl RotationMap {
    pub fn new(k: u32) -> Self {
        RotationMap { k, power: 1 }
    }

    pub fn identity(k: u32) -> Self {
        RotationMap { k, power: 0 }
    }

    pub fn inverse(self) -> Self {
        RotationMap { k: self.k, power: (3 - self.power % 3) % 3 }
    }

    pub fn compose(self, other: Self) -> Self {
        assert_eq!(self.k, other.k, "rotations of different triangles");
        RotationMap { k: self.k, power: (self.power + other.power) % 3 }
    }

    fn side(&self) -> i64 {
        1i64 << self.k
    }

    /// Image without any domain check.
    pub fn map_point(&self, p: LatticePoint) -> LatticePoint {
        let s = self.side();
        let mut q = p;
        for _ in 0..self.power % 3 {
            q = LatticePoint::new(s - q.a - q.b, q.a);
        }
        q
    }
}

impl fmt::Display for RotationMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.power % 3 {
            0 => write!(f, "id"),
            1 => write!(f, "psi_{}", self.k),
            _ => write!(f, "psi_{}^-1", self.k),
        }
    }
}

fn in_vk(k: u32, p: LatticePoint) -> bool {
    p.a >= 0 && p.b >= 0 && p.a + p.b <= 1i64 << k && GraphFamily::DoubledSG.point_in_gasket(p)
}

/// `ψ(p)` for `p ∈ V_k`.
pub fn rotation_apply(map: RotationMap, p: LatticePoint) -> Result<LatticePoint> {
    if !in_vk(map.k, p) {
        return Err(Error::domain(format!("({}, {}) is not a vertex of V_{}", p.a, p.b, map.k)));
    }
    let q = map.map_point(p);
    if !in_vk(map.k, q) {
        return Err(Error::domain(format!("image ({}, {}) lies outside V_{}", q.a, q.b, map.k)));
    }
    Ok(q)
}

/// Lattice points of `V_k`.
pub fn vk_points(k: u32) -> Vec<LatticePoint> {
    let s = 1i64 << k;
    (0..=s).flat_map(|a| (0..=s - a).map(move |b| LatticePoint::new(a, b))).filter(|&p| in_vk(k, p)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditCheck {
    pub name: String,
    pub passed: bool,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrientationCandidate {
    pub map: String,
    /// Largest deviation from `u = 0` on the pulled-back zero row and `u = 2` on the next row.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedFormReport {
    pub k: u32,
    pub origin_odometer: f64,
    pub expected_origin: f64,
    pub checks: Vec<AuditCheck>,
    pub orientation: Option<String>,
    pub candidates: Vec<OrientationCandidate>,
    pub stats: StabilizeStats,
}

impl ClosedFormReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

pub const MAX_AUDIT_K: u32 = 6;

/// Stabilizes `3^(k+1) δ_origin` and audits the odometer against its closed form.
///
/// The orientation check pulls the pinned rows of the half-plane odometer
/// (0 on the bottom row, 2 on the row above) back through each of the three
/// rotations and keeps the one that matches.
pub fn closed_form_audit(k: u32, tol: f64) -> Result<ClosedFormReport> {
    if k > MAX_AUDIT_K {
        return Err(Error::domain(format!("closed-form audit supports k <= {MAX_AUDIT_K}")));
    }
    let family = GraphFamily::DoubledSG;
    let mass0 = SandState::point_mass(&family, 3f64.powi(k as i32 + 1))?;
    let (u, stats) = stabilize_with_cap(&mass0, &ToppleSchedule::ParallelSweep, tol, DEFAULT_TOPPLE_CAP)?;
    let expected = 2.0 * 5f64.powi(k as i32);
    let origin = u.odometer(Vertex::ORIGIN);
    let slack = 10.0 * tol * expected.max(1.0);
    let mut checks = Vec::new();
    let mut check = |name: &str, dev: f64, bound: f64| {
        checks.push(AuditCheck { name: name.into(), passed: dev <= bound, max_deviation: dev });
    };

    check("origin value", (origin - expected).abs() / expected, 1e-6);

    let points = vk_points(k);
    let mirror = points
        .iter()
        .map(|&p| (u.odometer(Vertex::new(Side::Left, p)) - u.odometer(Vertex::new(Side::Right, p))).abs())
        .fold(0.0, f64::max);
    check("mirror symmetry", mirror, slack);

    let r = 1u32 << k;
    let outside = (0..u.graph.len() as u32)
        .filter(|&i| u.graph.dist(i) > r)
        .map(|i| u.odometer_at(i))
        .fold(0.0, f64::max);
    check("support in ball", outside, slack);

    check("laplacian identity", u.laplacian_identity_error(&mass0), 1e-9 * expected.max(1.0));

    let side = 1i64 << k;
    let mut candidates = Vec::new();
    let mut best: Option<(RotationMap, f64)> = None;
    for power in 0..3u8 {
        let map = RotationMap { k, power };
        let mut dev = 0.0f64;
        for &p in &points {
            let q = map.map_point(p);
            let pinned = match q.b {
                0 => 0.0,
                1 if q.a + q.b < side || k == 0 => 2.0,
                _ => continue,
            };
            dev = dev.max((u.odometer(Vertex::new(Side::Right, p)) - pinned).abs());
        }
        candidates.push(OrientationCandidate { map: map.to_string(), max_deviation: dev });
        if best.is_none_or(|(_, d)| dev < d) {
            best = Some((map, dev));
        }
    }
    let (map, dev) = best.unwrap();
    check("pinned rows", dev, slack);
    let orientation = (dev <= slack).then(|| map.to_string());

    Ok(ClosedFormReport { k, origin_odometer: origin, expected_origin: expected, checks, orientation, candidates, stats })
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundRow {
    pub delta: u32,
    pub min_odometer: f64,
    pub delta_beta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundAudit {
    pub n: u32,
    pub rows: Vec<LowerBoundRow>,
    /// Least-squares slope of `log min u` against `log δ`.
    pub slope: Option<f64>,
    /// Edges `x ~ y` with `d(y) = d(x) + 1` and `u(y) > u(x) + 10·tol`.
    pub monotonicity_violations: Vec<(Vertex, Vertex)>,
    /// Largest `u(y) - u(x)` over those edges (0 if none).
    pub max_violation: f64,
}

/// Minima of the odometer of `b_n δ_origin` over `B(n - 3δ)` for each δ.
pub fn odometer_lower_bound_audit(gasket: &Gasket, n: u32, deltas: &[u32], tol: f64) -> Result<LowerBoundAudit> {
    for &d in deltas {
        if d == 0 || 2 * d > n {
            return Err(Error::domain(format!("delta {d} must satisfy 1 <= delta <= n/2 = {}", n / 2)));
        }
    }
    let bn = gasket.ball_volume(n) as f64;
    let u = stabilize(&SandState::point_mass(gasket.family(), bn)?, &ToppleSchedule::ParallelSweep, tol)?;
    let g = Arc::clone(&u.graph);
    let rows: Vec<LowerBoundRow> = deltas
        .iter()
        .map(|&delta| {
            let r = n.saturating_sub(3 * delta);
            let min_odometer = g.ball_range(r).map(|i| u.odometer_at(i)).fold(f64::INFINITY, f64::min);
            LowerBoundRow { delta, min_odometer, delta_beta: (delta as f64).powf(BETA) }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.min_odometer > 0.0)
        .map(|r| ((r.delta as f64).ln(), r.min_odometer.ln()))
        .collect();
    let slope = least_squares_slope(&pts);
    let mut monotonicity_violations = Vec::new();
    let mut max_violation = 0.0f64;
    for i in g.ball_range(n) {
        for &w in g.neighbors(i) {
            if w == OUTSIDE || g.dist(w) != g.dist(i) + 1 {
                continue;
            }
            let up = u.odometer_at(w) - u.odometer_at(i);
            if up > 10.0 * tol {
                monotonicity_violations.push((g.vertex(i), g.vertex(w)));
                max_violation = max_violation.max(up);
            }
        }
    }
    Ok(LowerBoundAudit { n, rows, slope, monotonicity_violations, max_violation })
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

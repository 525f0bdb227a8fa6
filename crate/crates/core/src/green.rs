//! Dirichlet problems on balls: stopped Green functions, expected exit times,
//! harmonic extensions and the Harnack ratio.
//!
//! The Laplacian is `Δf(x) = mean_{y~x} f(y) - f(x)`. With this sign the
//! stopped Green function solves `Δg_n(·,z) = -δ_z` inside the ball and the
//! expected exit time solves `Δf = -1`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::constants::{ALPHA, BETA};
use crate::error::{Error, Result};
use crate::graph::{boundary_distances, BallGraph, Gasket, GraphFamily, OUTSIDE};
use crate::lattice::Vertex;
use crate::linalg::{conjugate_gradient, EnvelopeCholesky, SymCsr};
use crate::walk::RngStream;

/// Residual tolerance, relative to `max(1, max|f|)`.
pub const SOLVER_TOL: f64 = 1e-10;
/// Systems whose envelope factorization would cost more flops than this are
/// solved by conjugate gradients.
pub const DIRECT_COST_LIMIT: usize = 3_000_000_000;

const NO_ROW: u32 = u32::MAX;

/// A closed Dirichlet problem: an interior vertex set and the boundary that
/// receives prescribed values. Rows follow the BFS index of the graph.
#[derive(Debug, Clone)]
pub struct DirichletSystem {
    graph: Arc<BallGraph>,
    interior: Vec<u32>,
    boundary: Vec<u32>,
    row: Vec<u32>,
    boundary_slot: Vec<u32>,
}

impl DirichletSystem {
    /// Interior `B_origin(n)` minus its inner boundary; boundary the inner boundary.
    pub fn for_ball(gasket: &Gasket, n: u32) -> Result<Self> {
        Self::ball_system(gasket.origin_graph(n + 1), n)
    }

    /// Same for the ball `B_center(n)`.
    pub fn for_ball_at(family: &GraphFamily, center: Vertex, n: u32) -> Result<Self> {
        Self::ball_system(Arc::new(BallGraph::build(family, center, n + 1)?), n)
    }

    fn ball_system(graph: Arc<BallGraph>, n: u32) -> Result<Self> {
        let (mut interior, mut boundary) = (Vec::new(), Vec::new());
        for i in graph.ball_range(n) {
            if graph.is_inner_boundary(i, n) {
                boundary.push(i);
            } else {
                interior.push(i);
            }
        }
        Self::assemble(graph, interior, boundary)
    }

    /// An arbitrary finite interior; the boundary is every neighbor outside it.
    pub fn from_interior(graph: Arc<BallGraph>, mut interior: Vec<u32>) -> Result<Self> {
        interior.sort_unstable();
        interior.dedup();
        let mut inside = vec![false; graph.len()];
        for &i in &interior {
            *inside.get_mut(i as usize).ok_or_else(|| Error::domain("interior index out of range"))? = true;
        }
        let mut boundary: Vec<u32> = interior
            .iter()
            .flat_map(|&i| graph.neighbors(i).iter().copied())
            .filter(|&w| w == OUTSIDE || !inside[w as usize])
            .collect();
        boundary.sort_unstable();
        boundary.dedup();
        Self::assemble(graph, interior, boundary)
    }

    fn assemble(graph: Arc<BallGraph>, interior: Vec<u32>, boundary: Vec<u32>) -> Result<Self> {
        let mut row = vec![NO_ROW; graph.len()];
        let mut boundary_slot = vec![NO_ROW; graph.len()];
        for (r, &i) in interior.iter().enumerate() {
            row[i as usize] = r as u32;
        }
        for (s, &i) in boundary.iter().enumerate() {
            if i == OUTSIDE {
                return Err(Error::domain("system is not closed: interior touches the edge of the index"));
            }
            boundary_slot[i as usize] = s as u32;
        }
        for &i in &interior {
            for &w in graph.neighbors(i) {
                if w == OUTSIDE || (row[w as usize] == NO_ROW && boundary_slot[w as usize] == NO_ROW) {
                    return Err(Error::domain("system is not closed"));
                }
            }
        }
        Ok(DirichletSystem { graph, interior, boundary, row, boundary_slot })
    }

    pub fn graph(&self) -> &Arc<BallGraph> {
        &self.graph
    }

    /// Interior graph indices in row order.
    pub fn interior(&self) -> &[u32] {
        &self.interior
    }

    /// Boundary graph indices in slot order.
    pub fn boundary(&self) -> &[u32] {
        &self.boundary
    }

    pub fn interior_vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.interior.iter().map(|&i| self.graph.vertex(i))
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.boundary.iter().map(|&i| self.graph.vertex(i))
    }

    pub fn row_of(&self, i: u32) -> Option<usize> {
        self.row.get(i as usize).filter(|&&r| r != NO_ROW).map(|&r| r as usize)
    }

    pub fn boundary_slot_of(&self, i: u32) -> Option<usize> {
        self.boundary_slot.get(i as usize).filter(|&&s| s != NO_ROW).map(|&s| s as usize)
    }

    /// `K = D - A` restricted to the interior.
    fn matrix(&self) -> SymCsr {
        let rows = self
            .interior
            .iter()
            .map(|&i| {
                let nb = self.graph.neighbors(i);
                let mut r = vec![(self.row[i as usize] as usize, nb.len() as f64)];
                for &w in nb {
                    let rw = self.row[w as usize];
                    if rw != NO_ROW {
                        r.push((rw as usize, -1.0));
                    }
                }
                r
            })
            .collect();
        SymCsr::from_rows(rows)
    }
}

#[derive(Debug)]
enum Backend {
    Direct(EnvelopeCholesky),
    Iterative(SymCsr),
}

/// A factorized Dirichlet system; one factorization serves many right-hand sides.
#[derive(Debug)]
pub struct DirichletSolver {
    system: DirichletSystem,
    backend: Backend,
}

impl DirichletSolver {
    pub fn new(system: DirichletSystem) -> Result<Self> {
        let k = system.matrix();
        let backend = if k.envelope_cost() <= DIRECT_COST_LIMIT {
            Backend::Direct(EnvelopeCholesky::factor(&k)?)
        } else {
            Backend::Iterative(k)
        };
        Ok(DirichletSolver { system, backend })
    }

    pub fn system(&self) -> &DirichletSystem {
        &self.system
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.backend, Backend::Direct(_))
    }

    fn solve_matrix(&self, b: &[f64]) -> Result<Vec<f64>> {
        match &self.backend {
            Backend::Direct(c) => Ok(c.solve(b)),
            Backend::Iterative(k) => conjugate_gradient(k, b, 1e-14, 20 * k.dim() + 1000),
        }
    }

    /// Solves `Δf = rhs` on the interior with `f = boundary_values` on the
    /// boundary. Both slices follow [`DirichletSystem::interior`] and
    /// [`DirichletSystem::boundary`] order.
    pub fn solve(&self, rhs: &[f64], boundary_values: &[f64]) -> Result<DirichletSolution> {
        let s = &self.system;
        let g = &s.graph;
        if rhs.len() != s.interior.len() || boundary_values.len() != s.boundary.len() {
            return Err(Error::domain("right-hand side or boundary data has the wrong length"));
        }
        let mut values = vec![f64::NAN; g.len()];
        for (&i, &v) in s.boundary.iter().zip(boundary_values) {
            values[i as usize] = v;
        }
        if !s.interior.is_empty() {
            let b: Vec<f64> = s
                .interior
                .iter()
                .zip(rhs)
                .map(|(&i, &r)| {
                    let nb = g.neighbors(i);
                    let from_boundary: f64 = nb
                        .iter()
                        .filter_map(|&w| s.boundary_slot_of(w).map(|slot| boundary_values[slot]))
                        .sum();
                    from_boundary - nb.len() as f64 * r
                })
                .collect();
            let x = self.solve_matrix(&b)?;
            for (&i, v) in s.interior.iter().zip(x) {
                values[i as usize] = v;
            }
        }
        let scale = values.iter().filter(|v| !v.is_nan()).fold(1.0f64, |m, v| m.max(v.abs()));
        let residual = s
            .interior
            .iter()
            .zip(rhs)
            .map(|(&i, &r)| {
                let nb = g.neighbors(i);
                let mean = nb.iter().map(|&w| values[w as usize]).sum::<f64>() / nb.len() as f64;
                (mean - values[i as usize] - r).abs()
            })
            .fold(0.0, f64::max);
        if !(residual <= SOLVER_TOL * scale) {
            return Err(Error::Numeric { message: "Dirichlet residual above tolerance".into(), residual });
        }
        Ok(DirichletSolution { graph: Arc::clone(g), members: s.members(), values, residual })
    }
}

impl DirichletSystem {
    fn members(&self) -> Vec<u32> {
        let mut m: Vec<u32> = self.interior.iter().chain(&self.boundary).copied().collect();
        m.sort_unstable();
        m
    }
}

#[derive(Debug, Clone)]
pub struct DirichletSolution {
    graph: Arc<BallGraph>,
    members: Vec<u32>,
    values: Vec<f64>,
    /// `max |Δf - rhs|` over the interior.
    pub residual: f64,
}

impl DirichletSolution {
    pub fn graph(&self) -> &Arc<BallGraph> {
        &self.graph
    }

    pub fn value(&self, v: Vertex) -> Option<f64> {
        self.graph.index_of(v).and_then(|i| self.value_at(i))
    }

    /// Value at a graph index; `None` off the system.
    pub fn value_at(&self, i: u32) -> Option<f64> {
        self.values.get(i as usize).copied().filter(|x| !x.is_nan())
    }

    /// `(vertex, value)` over interior and boundary in BFS order.
    pub fn iter(&self) -> impl Iterator<Item = (Vertex, f64)> + '_ {
        self.members.iter().map(|&i| (self.graph.vertex(i), self.values[i as usize]))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn to_map(&self) -> HashMap<Vertex, f64> {
        self.iter().collect()
    }
}

/// Map-based entry point: missing `rhs` or boundary entries read as 0.
pub fn solve_dirichlet(
    system: DirichletSystem,
    rhs: &HashMap<Vertex, f64>,
    boundary_values: &HashMap<Vertex, f64>,
) -> Result<DirichletSolution> {
    let r: Vec<f64> = system.interior_vertices().map(|v| rhs.get(&v).copied().unwrap_or(0.0)).collect();
    let b: Vec<f64> = system.boundary_vertices().map(|v| boundary_values.get(&v).copied().unwrap_or(0.0)).collect();
    DirichletSolver::new(system)?.solve(&r, &b)
}

/// `g_n(·, z)` on `B_origin(n)`.
#[derive(Debug, Clone)]
pub struct GreenTable {
    pub n: u32,
    pub z: Vertex,
    pub values: DirichletSolution,
}

impl GreenTable {
    pub fn value(&self, x: Vertex) -> Option<f64> {
        self.values.value(x)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vertex, f64)> + '_ {
        self.values.iter()
    }
}

/// Green functions of one ball sharing a single factorization.
#[derive(Debug)]
pub struct GreenSolver {
    n: u32,
    solver: DirichletSolver,
}

impl GreenSolver {
    pub fn new(gasket: &Gasket, n: u32) -> Result<Self> {
        Ok(GreenSolver { n, solver: DirichletSolver::new(DirichletSystem::for_ball(gasket, n)?)? })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn system(&self) -> &DirichletSystem {
        self.solver.system()
    }

    fn index_in_ball(&self, z: Vertex) -> Result<u32> {
        let g = self.solver.system.graph();
        match g.index_of(z) {
            Some(i) if g.dist(i) <= self.n => Ok(i),
            _ => Err(Error::OutsideBall(z)),
        }
    }

    pub fn column(&self, z: Vertex) -> Result<GreenTable> {
        let zi = self.index_in_ball(z)?;
        let s = self.solver.system();
        let mut rhs = vec![0.0; s.interior().len()];
        if let Some(r) = s.row_of(zi) {
            rhs[r] = -1.0;
        }
        let values = self.solver.solve(&rhs, &vec![0.0; s.boundary().len()])?;
        Ok(GreenTable { n: self.n, z, values })
    }

    /// `g_n(z, z)`; zero on the inner boundary.
    pub fn diagonal(&self, z: Vertex) -> Result<f64> {
        let t = self.column(z)?;
        Ok(t.value(z).unwrap_or(0.0))
    }

    /// `E_x tau(n)` for every vertex of the ball.
    pub fn exit_times(&self) -> Result<DirichletSolution> {
        let s = self.solver.system();
        self.solver.solve(&vec![-1.0; s.interior().len()], &vec![0.0; s.boundary().len()])
    }
}

pub fn green(gasket: &Gasket, n: u32, z: Vertex) -> Result<GreenTable> {
    GreenSolver::new(gasket, n)?.column(z)
}

/// `f(x) = E_x tau(n)` on `B_origin(n)`.
pub fn expected_exit_time_exact(gasket: &Gasket, n: u32) -> Result<DirichletSolution> {
    if n == 0 {
        return Err(Error::domain("exit time requires n >= 1"));
    }
    GreenSolver::new(gasket, n)?.exit_times()
}

/// `min f(x) / d(x, ∂)^β` over the interior: the largest `c1` with
/// `E_x tau(n) >= c1 d^β` on this ball.
pub fn exit_time_lower_constant(gasket: &Gasket, n: u32) -> Result<f64> {
    let f = expected_exit_time_exact(gasket, n)?;
    let d = boundary_distances(f.graph(), n);
    let c = (0..d.len() as u32)
        .filter(|&i| d[i as usize] > 0)
        .map(|i| f.value_at(i).unwrap() / (d[i as usize] as f64).powf(BETA))
        .fold(f64::INFINITY, f64::min);
    if c.is_finite() {
        Ok(c)
    } else {
        Err(Error::DegenerateFit("ball has no interior".into()))
    }
}

/// Harmonic extensions from the boundary of `B_x(2n)`, compared on `B_x(n)`.
#[derive(Debug)]
pub struct HarnackProblem {
    n: u32,
    solver: DirichletSolver,
}

impl HarnackProblem {
    pub fn new(family: &GraphFamily, x: Vertex, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("Harnack ratio requires n >= 1"));
        }
        let solver = DirichletSolver::new(DirichletSystem::for_ball_at(family, x, 2 * n)?)?;
        Ok(HarnackProblem { n, solver })
    }

    pub fn boundary_len(&self) -> usize {
        self.solver.system().boundary().len()
    }

    /// `sup h / inf h` over `B_x(n)`, or `None` when the infimum vanishes.
    pub fn ratio(&self, boundary_values: &[f64]) -> Result<Option<f64>> {
        if boundary_values.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::domain("boundary data must be nonnegative"));
        }
        let interior_len = self.solver.system().interior().len();
        let h = self.solver.solve(&vec![0.0; interior_len], boundary_values)?;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in h.graph().ball_range(self.n) {
            let v = h.value_at(i).unwrap();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok(if lo > 0.0 { Some(hi / lo) } else { None })
    }

    /// Random boundary data: with probability 1/2 a unit mass at a uniform
    /// boundary vertex, otherwise i.i.d. Exp(1) values.
    pub fn random_data(&self, rng: &mut RngStream) -> Vec<f64> {
        let m = self.boundary_len();
        if rng.random_bool(0.5) {
            let mut d = vec![0.0; m];
            d[rng.below(m)] = 1.0;
            d
        } else {
            (0..m).map(|_| Exp1.sample(rng)).collect()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HarnackReport {
    pub worst_ratio: f64,
    pub ratios: Vec<f64>,
    pub excluded: usize,
}

/// Worst `sup/inf` ratio over `samples` random nonnegative harmonic functions.
pub fn harnack_ratio(family: &GraphFamily, x: Vertex, n: u32, samples: u64, seed: u64) -> Result<HarnackReport> {
    let p = HarnackProblem::new(family, x, n)?;
    let mut ratios = Vec::with_capacity(samples as usize);
    let mut excluded = 0;
    for s in 0..samples {
        let data = p.random_data(&mut RngStream::new(seed, s));
        match p.ratio(&data)? {
            Some(r) => ratios.push(r),
            None => {
                log::warn!("harmonic sample {s} vanishes inside the ball; excluded");
                excluded += 1;
            }
        }
    }
    let worst_ratio = ratios.iter().copied().fold(f64::NAN, f64::max);
    if worst_ratio.is_nan() {
        return Err(Error::domain("no sample produced a positive harmonic function"));
    }
    Ok(HarnackReport { worst_ratio, ratios, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagonalEntry {
    pub z: Vertex,
    pub green: f64,
    pub boundary_distance: u32,
}

/// `(z, g_n(z,z), d(z, ∂))` for every `z` in `B_origin(n)`, BFS order.
pub fn diagonal_green_bound_check(gasket: &Gasket, n: u32) -> Result<Vec<DiagonalEntry>> {
    let gs = GreenSolver::new(gasket, n)?;
    let graph = Arc::clone(gs.system().graph());
    let d = boundary_distances(&graph, n);
    graph
        .ball_range(n)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|i| {
            let z = graph.vertex(i);
            let green = if gs.system().row_of(i).is_some() { gs.diagonal(z)? } else { 0.0 };
            Ok(DiagonalEntry { z, green, boundary_distance: d[i as usize] })
        })
        .collect()
}

/// `max g_n(z,z) / d^(β-α)` over interior entries.
pub fn diagonal_upper_constant(entries: &[DiagonalEntry]) -> Result<f64> {
    let c = entries
        .iter()
        .filter(|e| e.boundary_distance > 0)
        .map(|e| e.green / (e.boundary_distance as f64).powf(BETA - ALPHA))
        .fold(f64::NAN, f64::max);
    if c.is_nan() {
        Err(Error::DegenerateFit("ball has no interior".into()))
    } else {
        Ok(c)
    }
}

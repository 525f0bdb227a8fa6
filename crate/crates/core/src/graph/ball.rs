//! Metric balls, BFS indexing and distances.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::graph::family::GraphFamily;
use crate::lattice::Vertex;

/// Adjacency sentinel for a neighbor beyond the indexed radius.
pub const OUTSIDE: u32 = u32::MAX;

/// The ball `B_center(radius)` indexed in BFS order.
///
/// Vertices are numbered layer by layer with the family's neighbor order, so
/// the numbering of a smaller ball is a prefix of the numbering of a larger
/// one around the same center. Adjacency is stored in CSR form; neighbors at
/// distance `radius + 1` are recorded as [`OUTSIDE`].
#[derive(Debug, Clone)]
pub struct BallGraph {
    family: GraphFamily,
    center: Vertex,
    radius: u32,
    vertices: Vec<Vertex>,
    dist: Vec<u32>,
    offsets: Vec<u32>,
    adj: Vec<u32>,
    index: HashMap<Vertex, u32>,
    // layer_ends[r] = number of vertices at distance <= r
    layer_ends: Vec<usize>,
}

impl BallGraph {
    pub fn build(family: &GraphFamily, center: Vertex, radius: u32) -> Result<Self> {
        if !family.contains(center) {
            return Err(Error::Address(center.to_string()));
        }
        let mut vertices = vec![center];
        let mut dist = vec![0u32];
        let mut index = HashMap::new();
        index.insert(center, 0u32);
        let mut layer_ends = vec![1usize];
        let mut layer_start = 0usize;
        for r in 1..=radius {
            let layer_end = vertices.len();
            for i in layer_start..layer_end {
                for w in family.neighbors_unchecked(vertices[i]) {
                    if !index.contains_key(&w) {
                        if vertices.len() >= u32::MAX as usize - 1 {
                            return Err(Error::Resource("ball too large to index".into()));
                        }
                        index.insert(w, vertices.len() as u32);
                        vertices.push(w);
                        dist.push(r);
                    }
                }
            }
            layer_start = layer_end;
            layer_ends.push(vertices.len());
        }
        let mut offsets = Vec::with_capacity(vertices.len() + 1);
        let mut adj = Vec::with_capacity(vertices.len() * 4);
        offsets.push(0u32);
        for &v in &vertices {
            for w in family.neighbors_unchecked(v) {
                adj.push(index.get(&w).copied().unwrap_or(OUTSIDE));
            }
            offsets.push(adj.len() as u32);
        }
        Ok(BallGraph { family: family.clone(), center, radius, vertices, dist, offsets, adj, index, layer_ends })
    }

    pub fn family(&self) -> &GraphFamily {
        &self.family
    }

    pub fn center(&self) -> Vertex {
        self.center
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, i: u32) -> Vertex {
        self.vertices[i as usize]
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn index_of(&self, v: Vertex) -> Option<u32> {
        self.index.get(&v).copied()
    }

    pub fn dist(&self, i: u32) -> u32 {
        self.dist[i as usize]
    }

    #[inline]
    pub fn neighbors(&self, i: u32) -> &[u32] {
        let (s, e) = (self.offsets[i as usize] as usize, self.offsets[i as usize + 1] as usize);
        &self.adj[s..e]
    }

    pub fn degree(&self, i: u32) -> usize {
        self.neighbors(i).len()
    }

    /// `|B_center(r)|`; requires `r <= radius`.
    pub fn volume(&self, r: u32) -> usize {
        self.layer_ends[r as usize]
    }

    /// Indices of `B_center(r)`, i.e. the prefix `0..volume(r)`.
    pub fn ball_range(&self, r: u32) -> std::ops::Range<u32> {
        0..self.volume(r) as u32
    }

    /// Membership in the inner boundary of `B_center(r)`, `r <= radius`.
    pub fn is_inner_boundary(&self, i: u32, r: u32) -> bool {
        self.dist(i) <= r && self.neighbors(i).iter().any(|&w| w == OUTSIDE || self.dist(w) > r)
    }

    /// Inner-boundary flags for `B_center(r)`, indexed by vertex index.
    pub fn inner_boundary_flags(&self, r: u32) -> Vec<bool> {
        self.ball_range(r).map(|i| self.is_inner_boundary(i, r)).collect()
    }

    pub fn ball(&self, r: u32) -> Ball {
        assert!(r <= self.radius, "ball radius {r} beyond indexed radius {}", self.radius);
        let members: Vec<Vertex> = self.vertices[..self.volume(r)].to_vec();
        let inner_boundary: Vec<Vertex> =
            self.ball_range(r).filter(|&i| self.is_inner_boundary(i, r)).map(|i| self.vertex(i)).collect();
        Ball::from_parts(self.center, r, members, self.dist[..self.volume(r)].to_vec(), inner_boundary)
    }
}

/// Closed ball with its inner boundary.
#[derive(Debug, Clone)]
pub struct Ball {
    center: Vertex,
    radius: u32,
    members: Vec<Vertex>,
    dist_to_center: Vec<u32>,
    member_set: HashSet<Vertex>,
    inner_boundary: Vec<Vertex>,
    boundary_set: HashSet<Vertex>,
}

impl Ball {
    fn from_parts(
        center: Vertex,
        radius: u32,
        members: Vec<Vertex>,
        dist_to_center: Vec<u32>,
        inner_boundary: Vec<Vertex>,
    ) -> Self {
        let member_set = members.iter().copied().collect();
        let boundary_set = inner_boundary.iter().copied().collect();
        Ball { center, radius, members, dist_to_center, member_set, inner_boundary, boundary_set }
    }

    pub fn center(&self) -> Vertex {
        self.center
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    /// Members in BFS order from the center.
    pub fn members(&self) -> &[Vertex] {
        &self.members
    }

    /// Distances to the center, aligned with [`members`](Self::members).
    pub fn distances(&self) -> &[u32] {
        &self.dist_to_center
    }

    pub fn inner_boundary(&self) -> &[Vertex] {
        &self.inner_boundary
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: Vertex) -> bool {
        self.member_set.contains(&v)
    }

    pub fn is_inner_boundary(&self, v: Vertex) -> bool {
        self.boundary_set.contains(&v)
    }
}

/// A graph family together with a shared, growable BFS index around the origin.
#[derive(Debug)]
pub struct Gasket {
    family: GraphFamily,
    origin: RwLock<Arc<BallGraph>>,
}

const INITIAL_RADIUS: u32 = 16;

impl Gasket {
    pub fn new(family: GraphFamily) -> Self {
        let g = BallGraph::build(&family, Vertex::ORIGIN, INITIAL_RADIUS).expect("origin is a vertex of every family");
        Gasket { family, origin: RwLock::new(Arc::new(g)) }
    }

    pub fn doubled() -> Self {
        Gasket::new(GraphFamily::DoubledSG)
    }

    pub fn family(&self) -> &GraphFamily {
        &self.family
    }

    /// A BFS index around the origin covering at least `min_radius`.
    /// Radii grow by doubling; every returned index is a prefix-compatible
    /// extension of the earlier ones.
    pub fn origin_graph(&self, min_radius: u32) -> Arc<BallGraph> {
        {
            let g = self.origin.read().unwrap();
            if g.radius() >= min_radius {
                return Arc::clone(&g);
            }
        }
        let mut g = self.origin.write().unwrap();
        if g.radius() < min_radius {
            let mut r = g.radius().max(1);
            while r < min_radius {
                r *= 2;
            }
            *g = Arc::new(BallGraph::build(&self.family, Vertex::ORIGIN, r).expect("origin is a vertex"));
        }
        Arc::clone(&g)
    }

    pub fn neighbors(&self, v: Vertex) -> Result<crate::graph::family::Neighbors> {
        self.family.neighbors(v)
    }

    pub fn edge_exists(&self, u: Vertex, v: Vertex) -> bool {
        self.family.edge_exists(u, v)
    }

    pub fn contains(&self, v: Vertex) -> bool {
        self.family.contains(v)
    }

    /// `B_center(n)` with its inner boundary.
    pub fn ball(&self, center: Vertex, n: u32) -> Result<Ball> {
        if center.is_origin() {
            return Ok(self.origin_graph(n).ball(n));
        }
        Ok(BallGraph::build(&self.family, center, n)?.ball(n))
    }

    /// `b_n = |B_origin(n)|`.
    pub fn ball_volume(&self, n: u32) -> usize {
        self.origin_graph(n).volume(n)
    }

    /// Graph distance by bidirectional breadth-first search.
    pub fn distance(&self, x: Vertex, y: Vertex) -> Result<u64> {
        for v in [x, y] {
            if !self.family.contains(v) {
                return Err(Error::Address(v.to_string()));
            }
        }
        if x == y {
            return Ok(0);
        }
        let mut seen = [HashMap::from([(x, 0u64)]), HashMap::from([(y, 0u64)])];
        let mut frontier = [vec![x], vec![y]];
        let mut depth = [0u64, 0u64];
        loop {
            // expand the smaller frontier by one full layer
            let s = if frontier[0].len() <= frontier[1].len() { 0 } else { 1 };
            let o = 1 - s;
            let mut next = Vec::new();
            let mut best: Option<u64> = None;
            for &v in &frontier[s] {
                for w in self.family.neighbors_unchecked(v) {
                    if let Some(&dw) = seen[o].get(&w) {
                        let total = depth[s] + 1 + dw;
                        best = Some(best.map_or(total, |b| b.min(total)));
                    }
                    if !seen[s].contains_key(&w) {
                        seen[s].insert(w, depth[s] + 1);
                        next.push(w);
                    }
                }
            }
            if let Some(b) = best {
                return Ok(b);
            }
            if next.is_empty() {
                return Err(Error::domain("vertices are not connected"));
            }
            depth[s] += 1;
            frontier[s] = next;
        }
    }

    /// `d(z, inner boundary of ball)`, by multi-source BFS inside the ball.
    /// Any path from `z` out of the ball crosses the inner boundary, so the
    /// restricted search is exact.
    pub fn distance_to_inner_boundary(&self, ball: &Ball, z: Vertex) -> Result<u64> {
        if !ball.contains(z) {
            return Err(Error::OutsideBall(z));
        }
        let mut seen: HashSet<Vertex> = ball.inner_boundary().iter().copied().collect();
        let mut frontier: Vec<Vertex> = ball.inner_boundary().to_vec();
        let mut d = 0u64;
        loop {
            if frontier.contains(&z) {
                return Ok(d);
            }
            let mut next = Vec::new();
            for &v in &frontier {
                for w in self.family.neighbors_unchecked(v) {
                    if ball.contains(w) && seen.insert(w) {
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                return Err(Error::domain("inner boundary unreachable"));
            }
            frontier = next;
            d += 1;
        }
    }
}

impl Default for Gasket {
    fn default() -> Self {
        Gasket::doubled()
    }
}

/// Distance from every vertex of `B_origin(n)` to its inner boundary, indexed
/// like the origin graph. Multi-source BFS over the prefix `0..b_n`.
pub fn boundary_distances(graph: &BallGraph, n: u32) -> Vec<u32> {
    let len = graph.volume(n);
    let mut d = vec![u32::MAX; len];
    let mut frontier: Vec<u32> = graph.ball_range(n).filter(|&i| graph.is_inner_boundary(i, n)).collect();
    for &i in &frontier {
        d[i as usize] = 0;
    }
    let mut level = 0;
    while !frontier.is_empty() {
        level += 1;
        let mut next = Vec::new();
        for &i in &frontier {
            for &w in graph.neighbors(i) {
                if w != OUTSIDE && (w as usize) < len && d[w as usize] == u32::MAX {
                    d[w as usize] = level;
                    next.push(w);
                }
            }
        }
        frontier = next;
    }
    d
}

//! Literal set-union construction of the level-`n` gasket triangle.
//!
//! `V_{n+1} = V_n ∪ ((2^n,0)+V_n) ∪ ((0,2^n)+V_n)` and likewise for the edges,
//! in lattice coordinates. Exponential in the level; used as ground truth for
//! the constant-time neighbor oracle.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::family::GraphFamily;
use crate::lattice::{LatticePoint, Side, Vertex};

pub const MAX_CONSTRUCT_LEVEL: u32 = 12;

pub type Edge = (LatticePoint, LatticePoint);

#[derive(Debug, Clone)]
pub struct Construction {
    pub level: u32,
    pub vertices: BTreeSet<LatticePoint>,
    pub edges: BTreeSet<Edge>,
}

fn ordered(p: LatticePoint, q: LatticePoint) -> Edge {
    if p <= q {
        (p, q)
    } else {
        (q, p)
    }
}

impl Construction {
    pub fn has_edge(&self, p: LatticePoint, q: LatticePoint) -> bool {
        self.edges.contains(&ordered(p, q))
    }

    /// Neighbors of `p` according to the edge set.
    pub fn adjacent(&self, p: LatticePoint) -> BTreeSet<LatticePoint> {
        // every edge touching p has its other end at a unit lattice step
        [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]
            .iter()
            .map(|&(da, db)| p.offset(da, db))
            .filter(|&q| self.has_edge(p, q))
            .collect()
    }
}

pub fn recursive_construct(level: u32) -> Result<Construction> {
    if level > MAX_CONSTRUCT_LEVEL {
        return Err(Error::Resource(format!(
            "construction level {level} exceeds the maximum {MAX_CONSTRUCT_LEVEL}"
        )));
    }
    let o = LatticePoint::ORIGIN;
    let (e1, e2) = (LatticePoint::new(1, 0), LatticePoint::new(0, 1));
    let mut vertices: BTreeSet<LatticePoint> = [o, e1, e2].into_iter().collect();
    let mut edges: BTreeSet<Edge> =
        [ordered(o, e1), ordered(e1, e2), ordered(o, e2)].into_iter().collect();

    for n in 0..level {
        let s = 1i64 << n;
        let shifts = [(s, 0), (0, s)];
        let mut next_v = vertices.clone();
        let mut next_e = edges.clone();
        for (da, db) in shifts {
            next_v.extend(vertices.iter().map(|p| p.offset(da, db)));
            next_e.extend(edges.iter().map(|(p, q)| ordered(p.offset(da, db), q.offset(da, db))));
        }
        vertices = next_v;
        edges = next_e;
    }
    Ok(Construction { level, vertices, edges })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleAudit {
    pub level: u32,
    pub vertices: usize,
    pub edges: usize,
    /// Lattice points where membership or adjacency disagree.
    pub mismatches: Vec<String>,
}

/// Compares the neighbor oracle of the one-sided gasket with
/// [`recursive_construct`] on every lattice point of the level triangle.
pub fn oracle_audit(level: u32) -> Result<OracleAudit> {
    let c = recursive_construct(level)?;
    let family = GraphFamily::OneSidedSG;
    let side = 1i64 << level;
    let mut mismatches = Vec::new();
    for a in 0..=side {
        for b in 0..=side - a {
            let p = LatticePoint::new(a, b);
            let in_oracle = family.point_in_gasket(p);
            if in_oracle != c.vertices.contains(&p) {
                mismatches.push(format!("{p}: oracle membership {in_oracle}"));
                continue;
            }
            if !in_oracle {
                continue;
            }
            let oracle: BTreeSet<LatticePoint> = family
                .neighbors_unchecked(Vertex::new(Side::Right, p))
                .iter()
                .map(|v| v.point())
                .filter(|q| c.vertices.contains(q))
                .collect();
            if oracle != c.adjacent(p) {
                mismatches.push(format!("{p}: oracle neighbors differ from E_{level}"));
            }
        }
    }
    Ok(OracleAudit { level, vertices: c.vertices.len(), edges: c.edges.len(), mismatches })
}

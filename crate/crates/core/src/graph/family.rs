//! Constant-time neighbor oracle for the gasket families.
//!
//! The one-sided gasket is the union of unit upward lattice cells `(c, d)`
//! (corners `(c,d)`, `(c+1,d)`, `(c,d+1)`) that survive the copy recursion.
//! For the binary gasket a cell survives iff `c & d == 0` (Pascal's triangle
//! mod 2). A lattice edge belongs to exactly one upward cell, so an edge exists
//! iff that cell survives.

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, Side, Vertex};

/// Maximum degree of any family: six lattice directions.
pub const MAX_DEGREE: usize = 6;

pub type Neighbors = ArrayVec<Vertex, MAX_DEGREE>;

/// Lattice step and the lower corner (relative to the vertex) of the upward
/// cell that owns the edge. The order fixes the neighbor enumeration order.
const DIRECTIONS: [((i64, i64), (i64, i64)); 6] = [
    ((1, 0), (0, 0)),
    ((0, 1), (0, 0)),
    ((-1, 1), (-1, 0)),
    ((-1, 0), (-1, 0)),
    ((0, -1), (0, -1)),
    ((1, -1), (0, -1)),
];

/// Copy-placement rule: a level-`L+1` triangle of side `scale^(L+1)` is the
/// union of level-`L` triangles translated by `scale^L * shift` for every
/// shift. A unit cell survives iff every base-`scale` digit pair of its
/// corner is a listed shift.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CopyPlacement {
    scale: u32,
    shifts: Vec<(u32, u32)>,
}

impl CopyPlacement {
    pub fn new(scale: u32, mut shifts: Vec<(u32, u32)>) -> Result<Self> {
        if scale < 2 {
            return Err(Error::domain("copy placement scale must be at least 2"));
        }
        shifts.sort_unstable();
        shifts.dedup();
        if !shifts.contains(&(0, 0)) {
            return Err(Error::domain("copy placement must contain the shift (0,0)"));
        }
        if let Some(s) = shifts.iter().find(|(i, j)| i + j > scale - 1) {
            return Err(Error::domain(format!(
                "shift {s:?} does not place an upward copy inside a triangle of side {scale}"
            )));
        }
        Ok(CopyPlacement { scale, shifts })
    }

    /// Side-3 subdivision keeping all six upward sub-triangles.
    pub fn subdivision3() -> Self {
        CopyPlacement::new(3, vec![(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2)]).unwrap()
    }

    /// Side-4 subdivision keeping nine upward sub-triangles (all but the central one).
    pub fn nine_upward4() -> Self {
        let mut shifts: Vec<(u32, u32)> =
            (0..4).flat_map(|i| (0..4 - i).map(move |j| (i, j))).collect();
        shifts.retain(|&s| s != (1, 1));
        CopyPlacement::new(4, shifts).unwrap()
    }

    /// The binary gasket expressed as a placement; used to cross-check the bit test.
    pub fn binary() -> Self {
        CopyPlacement::new(2, vec![(0, 0), (1, 0), (0, 1)]).unwrap()
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn shifts(&self) -> &[(u32, u32)] {
        &self.shifts
    }

    pub fn retains(&self, mut c: i64, mut d: i64) -> bool {
        if c < 0 || d < 0 {
            return false;
        }
        let s = self.scale as i64;
        while c > 0 || d > 0 {
            let digit = ((c % s) as u32, (d % s) as u32);
            if self.shifts.binary_search(&digit).is_err() {
                return false;
            }
            c /= s;
            d /= s;
        }
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphFamily {
    /// Two mirror copies of the gasket glued at the origin; 4-regular.
    #[default]
    DoubledSG,
    /// The gasket itself; the origin has degree 2.
    OneSidedSG,
    /// Doubled gasket built from a configurable copy placement.
    ModifiedNineCopy(CopyPlacement),
}

impl GraphFamily {
    pub fn nine_copy_default() -> Self {
        GraphFamily::ModifiedNineCopy(CopyPlacement::subdivision3())
    }

    pub fn is_doubled(&self) -> bool {
        !matches!(self, GraphFamily::OneSidedSG)
    }

    /// Whether the unit upward cell with lower corner `(c, d)` is part of the gasket.
    pub fn cell_retained(&self, c: i64, d: i64) -> bool {
        if c < 0 || d < 0 {
            return false;
        }
        match self {
            GraphFamily::DoubledSG | GraphFamily::OneSidedSG => c & d == 0,
            GraphFamily::ModifiedNineCopy(p) => p.retains(c, d),
        }
    }

    /// Whether the lattice point belongs to the one-sided vertex set.
    pub fn point_in_gasket(&self, p: LatticePoint) -> bool {
        p.a >= 0
            && p.b >= 0
            && (self.cell_retained(p.a, p.b)
                || self.cell_retained(p.a - 1, p.b)
                || self.cell_retained(p.a, p.b - 1))
    }

    pub fn contains(&self, v: Vertex) -> bool {
        if v.side() == Side::Left && !self.is_doubled() {
            return false;
        }
        self.point_in_gasket(v.point())
    }

    fn one_sided_neighbors(&self, p: LatticePoint, side: Side, out: &mut Neighbors) {
        for ((da, db), (ca, cb)) in DIRECTIONS {
            if self.cell_retained(p.a + ca, p.b + cb) {
                out.push(Vertex::new(side, p.offset(da, db)));
            }
        }
    }

    /// Adjacent vertices in a fixed order: lattice directions
    /// `(+1,0), (0,+1), (-1,+1), (-1,0), (0,-1), (+1,-1)`; at the origin of a
    /// doubled family the Right copy comes first, then the Left copy.
    pub fn neighbors(&self, v: Vertex) -> Result<Neighbors> {
        if !self.contains(v) {
            return Err(Error::Address(v.to_string()));
        }
        Ok(self.neighbors_unchecked(v))
    }

    /// Same as [`neighbors`](Self::neighbors) without the address check.
    pub fn neighbors_unchecked(&self, v: Vertex) -> Neighbors {
        let mut out = Neighbors::new();
        if v.is_origin() {
            self.one_sided_neighbors(LatticePoint::ORIGIN, Side::Right, &mut out);
            if self.is_doubled() {
                self.one_sided_neighbors(LatticePoint::ORIGIN, Side::Left, &mut out);
            }
        } else {
            self.one_sided_neighbors(v.point(), v.side(), &mut out);
        }
        out
    }

    pub fn degree(&self, v: Vertex) -> Result<usize> {
        self.neighbors(v).map(|n| n.len())
    }

    pub fn edge_exists(&self, u: Vertex, v: Vertex) -> bool {
        self.contains(u) && self.contains(v) && self.neighbors_unchecked(u).contains(&v)
    }
}

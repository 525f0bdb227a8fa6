//! Exact addressing on the triangular lattice.
//!
//! A point is stored by its integer coefficients `(a, b)` in the basis
//! `e1 = (1, 0)`, `e2 = (1/2, sqrt(3)/2)`, so the gasket never needs floating
//! point addresses. The doubled gasket is two mirror copies of the one-sided
//! gasket that share only the origin; a [`Side`] tag selects the copy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

const HALF_SQRT3: f64 = 0.866_025_403_784_438_6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub a: i64,
    pub b: i64,
}

impl LatticePoint {
    pub const ORIGIN: LatticePoint = LatticePoint { a: 0, b: 0 };

    pub const fn new(a: i64, b: i64) -> Self {
        LatticePoint { a, b }
    }

    pub fn offset(self, da: i64, db: i64) -> Self {
        LatticePoint::new(self.a + da, self.b + db)
    }

    /// Euclidean position `(a + b/2, b * sqrt(3)/2)`.
    pub fn euclidean(self) -> (f64, f64) {
        (self.a as f64 + 0.5 * self.b as f64, self.b as f64 * HALF_SQRT3)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.a, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn flipped(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Side::Left => 'L',
            Side::Right => 'R',
        }
    }
}

/// A vertex of the (doubled) gasket. The origin is always stored as
/// `Right(0,0)` so that equality and hashing see a single representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(Side, i64, i64)", into = "(Side, i64, i64)")]
pub struct Vertex {
    side: Side,
    point: LatticePoint,
}

impl Vertex {
    pub const ORIGIN: Vertex = Vertex { side: Side::Right, point: LatticePoint::ORIGIN };

    pub fn new(side: Side, point: LatticePoint) -> Self {
        if point == LatticePoint::ORIGIN {
            Vertex::ORIGIN
        } else {
            Vertex { side, point }
        }
    }

    pub fn right(a: i64, b: i64) -> Self {
        Vertex::new(Side::Right, LatticePoint::new(a, b))
    }

    pub fn left(a: i64, b: i64) -> Self {
        Vertex::new(Side::Left, LatticePoint::new(a, b))
    }

    pub fn side(self) -> Side {
        self.side
    }

    pub fn point(self) -> LatticePoint {
        self.point
    }

    pub fn a(self) -> i64 {
        self.point.a
    }

    pub fn b(self) -> i64 {
        self.point.b
    }

    pub fn is_origin(self) -> bool {
        self == Vertex::ORIGIN
    }

    /// Image under the reflection at the y-axis (swaps sides, fixes the origin).
    pub fn mirrored(self) -> Vertex {
        Vertex::new(self.side.flipped(), self.point)
    }

    /// Euclidean position; Left vertices are reflected at the y-axis.
    pub fn euclidean(self) -> (f64, f64) {
        let (x, y) = self.point.euclidean();
        match self.side {
            Side::Right => (x, y),
            Side::Left => (-x, y),
        }
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.side.as_char(), self.point)
    }
}

impl FromStr for Vertex {
    type Err = Error;

    /// Accepts `R:a,b`, `L:a,b`, `o` or `origin`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("o") || s.eq_ignore_ascii_case("origin") {
            return Ok(Vertex::ORIGIN);
        }
        let bad = || Error::Address(s.to_string());
        let (side, rest) = s.split_once(':').ok_or_else(bad)?;
        let side = match side.trim() {
            "R" | "r" => Side::Right,
            "L" | "l" => Side::Left,
            _ => return Err(bad()),
        };
        let (a, b) = rest.split_once(',').ok_or_else(bad)?;
        let a: i64 = a.trim().parse().map_err(|_| bad())?;
        let b: i64 = b.trim().parse().map_err(|_| bad())?;
        Ok(Vertex::new(side, LatticePoint::new(a, b)))
    }
}

impl From<(Side, i64, i64)> for Vertex {
    fn from((side, a, b): (Side, i64, i64)) -> Self {
        Vertex::new(side, LatticePoint::new(a, b))
    }
}

impl From<Vertex> for (Side, i64, i64) {
    fn from(v: Vertex) -> Self {
        (v.side, v.point.a, v.point.b)
    }
}

//! The doubled Sierpinski gasket graph and its variants.

pub mod ball;
pub mod construct;
pub mod family;

pub use ball::{boundary_distances, Ball, BallGraph, Gasket, OUTSIDE};
pub use construct::{oracle_audit, recursive_construct, Construction, OracleAudit};
pub use family::{CopyPlacement, GraphFamily, Neighbors};

//! Internal DLA and the divisible sandpile on the doubled Sierpinski gasket.
//!
//! * [`graph`]: exact lattice addressing, neighbor oracle, balls, distances
//! * [`walk`]: reproducible simple random walks and stopping rules
//! * [`green`]: Dirichlet problems on balls, stopped Green functions, exit times
//! * [`sandpile`]: divisible sandpile stabilization and odometer audits
//! * [`idla`]: IDLA clusters, stopped/resumed growth, visit counters
//! * [`fluctuations`]: sweeps, exponent fits and concentration checks
//! * [`render`]: SVG output

pub mod constants;
pub mod error;
pub mod fluctuations;
pub mod graph;
pub mod green;
pub mod idla;
pub mod lattice;
pub mod linalg;
pub mod render;
pub mod sandpile;
pub mod walk;

pub use error::{Error, Result};
pub use graph::{Ball, BallGraph, Gasket, GraphFamily};
pub use lattice::{LatticePoint, Side, Vertex};

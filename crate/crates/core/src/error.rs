use thiserror::Error;

use crate::lattice::Vertex;

/// Error classes shared by all modules. The CLI maps each class to an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid address {0}: not a vertex of the graph")]
    Address(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("vertex {0} lies outside the ball")]
    OutsideBall(Vertex),

    #[error("numeric error: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },

    #[error("did not converge after {iterations} iterations (remaining excess {excess:e})")]
    Convergence { iterations: u64, excess: f64 },

    #[error("walk exceeded the step cap of {0}")]
    StepCap(u64),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Coarse class used for process exit codes: 3 domain, 4 numeric, 5 resource.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Address(_) | Error::Domain(_) | Error::OutsideBall(_) | Error::DegenerateFit(_) => 3,
            Error::Numeric { .. } | Error::Convergence { .. } | Error::StepCap(_) => 4,
            Error::Resource(_) => 5,
        }
    }
}

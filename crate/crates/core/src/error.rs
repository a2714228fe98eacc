use std::path::PathBuf;

use thiserror::Error;

use crate::flow::Trajectory;

/// Errors produced by the geometry, flow and curvature routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: bad graph, bad config, wrong dimensions.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error("distribution is not interior: {0}")]
    NotInterior(String),

    #[error("parameter {theta:?} outside domain [{min:?}, {max:?}]")]
    Domain {
        theta: Vec<f64>,
        min: Vec<f64>,
        max: Vec<f64>,
    },

    /// A finite-difference stencil would leave the region where the model is defined.
    #[error("finite-difference stencil at {theta:?} leaves the model's domain of definition")]
    StencilMargin { theta: Vec<f64> },

    /// Laplacian with a near-zero eigenvalue beyond the constant kernel.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("degenerate metric tensor: {0}")]
    DegenerateMetric(String),

    /// The flow could not take a valid step even after shrinking `h` to `h_min`.
    #[error("flow stalled at the domain boundary after {} samples", partial.samples.len())]
    BoundaryStall { partial: Box<Trajectory> },

    #[error("degenerate convergence rate: every initial condition is already at equilibrium")]
    DegenerateRate,

    /// A statement was invoked outside its hypotheses (e.g. kappa <= 0 for log-Sobolev).
    #[error("inapplicable: {0}")]
    Inapplicable(String),

    #[error("inconsistent result: {0}")]
    Inconsistency(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Process exit code: 2 config/usage, 3 inapplicable, 4 numerical degeneracy, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Domain { .. }
            | Error::NotInterior(_)
            | Error::Disconnected
            | Error::Precondition(_)
            | Error::Io { .. }
            | Error::Csv { .. } => 2,
            Error::Inapplicable(_) | Error::DegenerateRate => 3,
            Error::Degenerate(_)
            | Error::DegenerateMetric(_)
            | Error::BoundaryStall { .. }
            | Error::StencilMargin { .. }
            | Error::Inconsistency(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

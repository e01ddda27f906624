use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// The variants are grouped so the command-line front end can map them onto
/// exit codes: validation problems, feasibility limits, and estimation
/// quality failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mass {value} at vertex {vertex}")]
    InvalidMass { vertex: usize, value: f64 },

    #[error("invalid wall spring {value} at vertex {vertex}")]
    InvalidWallSpring { vertex: usize, value: f64 },

    #[error("invalid coupling spring {value} on edge ({u}, {v})")]
    InvalidCoupling { u: usize, v: usize, value: f64 },

    #[error("self-edge on vertex {0}")]
    SelfEdge(usize),

    #[error("edge ({u}, {v}) listed with conflicting spring constants {first} and {second}")]
    AsymmetricEdge { u: usize, v: usize, first: f64, second: f64 },

    #[error("vertex {vertex} out of range for a network of {size} oscillators")]
    VertexOutOfRange { vertex: usize, size: usize },

    #[error("vertex {0} has no restoring force (zero diagonal stiffness)")]
    FreeVertex(usize),

    #[error("matrix is not symmetric: |A[{row}][{col}] - A[{col}][{row}]| = {deviation:e}")]
    NotSymmetric { row: usize, col: usize, deviation: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("evaluation point {point} is within the pole guard of eigenvalue {eigenvalue}")]
    NearPole { eigenvalue: f64, point: String },

    #[error("gate index collision or invalid qubit: {0}")]
    QubitIndex(String),

    #[error("register error: {0}")]
    Register(String),

    #[error("oracle is not an isometry: {0}")]
    NotIsometry(String),

    #[error("auxiliary registers not restored (residual population {0:e})")]
    AncillaNotRestored(f64),

    #[error("circuit needs {required} qubits, above the limit of {limit}")]
    Infeasible { required: usize, limit: usize },

    #[error("eigenvalue {lambda} outside the encodable range [-{bound}, {bound}]")]
    NotEncodable { lambda: f64, bound: f64 },

    #[error("invalid tolerance: {0}")]
    Tolerance(String),

    #[error(
        "peak at phase {phase} violates the window guard (Q = {q}, M = {m}); \
         consider rescaling the encoding by cos(2 pi Q / M)"
    )]
    WindowGuard { phase: f64, q: usize, m: usize },

    #[error("estimation quality failure: {0}")]
    Quality(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for input-validation failures (bad network, bad matrix, bad file).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidMass { .. }
                | Error::InvalidWallSpring { .. }
                | Error::InvalidCoupling { .. }
                | Error::SelfEdge(_)
                | Error::AsymmetricEdge { .. }
                | Error::VertexOutOfRange { .. }
                | Error::FreeVertex(_)
                | Error::NotSymmetric { .. }
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Tolerance(_)
                | Error::Argument(_)
                | Error::Dimension(_)
        )
    }
}

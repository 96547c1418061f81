use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not in se(3)")]
    NotInSe3,

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("abscissa {x} outside [0, {length}]")]
    Domain { x: f64, length: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid model: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("assembly failed at node {node} (X = {abscissa}): {reason}")]
    Assembly {
        node: usize,
        abscissa: f64,
        reason: String,
    },

    #[error("mass matrix not SPD (smallest eigenvalue ≈ {min_eigenvalue:.3e})")]
    NotSpd { min_eigenvalue: f64 },

    #[error("quasi-steady solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("split fraction {0} outside (0, 1)")]
    Fraction(f64),

    #[error("core mass matrix has zero norm")]
    ZeroCoreMass,

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps a numeric failure with the simulation time it occurred at.
    pub fn at_time(self, t: f64) -> Error {
        match self {
            e @ Error::Integration { .. } => e,
            other => Error::Integration {
                t,
                reason: other.to_string(),
            },
        }
    }

    /// Whether the failure is numerical rather than a bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Assembly { .. }
                | Error::NotSpd { .. }
                | Error::NonConvergence { .. }
                | Error::Integration { .. }
                | Error::ZeroCoreMass
        )
    }
}

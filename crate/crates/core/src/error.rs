use thiserror::Error;

/// Errors raised by the selection and inference pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("column {index} ({name}) is constant; it cannot be standardized or correlated")]
    ConstantColumn { index: usize, name: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(
        "noise scale unavailable: {0}; supply sigma explicitly (least-squares estimation needs n > p and full column rank)"
    )]
    SigmaUnavailable(String),

    #[error("matrix is numerically rank deficient: {0}")]
    RankDeficient(String),

    #[error("coordinate descent did not converge after {sweeps} sweeps (KKT residual {kkt_residual:.3e})")]
    NonConvergence { sweeps: usize, kkt_residual: f64 },

    #[error("response violates selection constraint row {row} by {violation:.3e}")]
    Infeasible { row: usize, violation: f64 },

    #[error("truncation cell mass underflows (log mass {log_mass:.1}); pivot is unreliable")]
    DegenerateTruncation { log_mass: f64 },

    #[error("confidence bound bracket could not be found: {0}")]
    BracketFailure(String),

    #[error("Gram matrix is numerically singular (smallest eigenvalue {lambda_min:.3e}); knockoffs undefined")]
    SingularGram { lambda_min: f64 },

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("prototype set inconsistent with response: {0}")]
    InconsistentPrototypes(String),

    #[error("could not match selection size {target}: {reason}")]
    SizeMatch { target: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient(_)
                | Error::NonConvergence { .. }
                | Error::DegenerateTruncation { .. }
                | Error::BracketFailure(_)
                | Error::SingularGram { .. }
                | Error::Certification(_)
                | Error::SizeMatch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

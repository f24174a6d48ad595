use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    InvalidCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate covariates: all pairwise distances are zero")]
    DegenerateCovariates,

    #[error("invalid masses: {0}")]
    InvalidMass(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error(
        "solver did not converge after {iterations} iterations \
         (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e})"
    )]
    NotConverged {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
    },

    #[error("perfect separation in logistic fit; use a positive ridge penalty")]
    Separation,

    #[error("probability at row {row} is {value}, outside the open interval (0, 1)")]
    ProbabilityBoundary { row: usize, value: f64 },

    #[error("moment system infeasible or ill-conditioned (max constraint violation {max_violation:.3e})")]
    MomentInfeasible { max_violation: f64 },

    #[error("all case weights are zero")]
    NoCaseWeight,

    #[error("every candidate failed: {0}")]
    AllCandidatesFailed(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

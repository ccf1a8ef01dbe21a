use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

/// Every failure the lab can report.
///
/// The harness maps each variant onto a process exit status through
/// [`LabError::exit_code`].
#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("nodes {i} and {j} coincide (zero pair distance)")]
    SingularDistance { i: usize, j: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "overflow at pair ({i}, {j}): quotient {quotient:e} raised to {exponent} is not representable; \
         reduce dt or cap the exponent"
    )]
    Overflow {
        i: usize,
        j: usize,
        quotient: f64,
        exponent: f64,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_)
            | LabError::Toml(_)
            | LabError::Validation(_)
            | LabError::Domain(_)
            | LabError::SingularDistance { .. } => 2,
            LabError::NonConvergence { .. } | LabError::Numeric(_) => 3,
            LabError::Overflow { .. } => 4,
            LabError::Io(_) | LabError::Csv(_) | LabError::Json(_) => 1,
        }
    }

    /// Short machine-readable tag used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Config(_) | LabError::Toml(_) => "config",
            LabError::SingularDistance { .. } => "singular_distance",
            LabError::Validation(_) => "validation",
            LabError::Domain(_) => "domain",
            LabError::Overflow { .. } => "overflow",
            LabError::Numeric(_) => "numeric",
            LabError::NonConvergence { .. } => "non_convergence",
            LabError::Io(_) | LabError::Csv(_) | LabError::Json(_) => "io",
        }
    }
}

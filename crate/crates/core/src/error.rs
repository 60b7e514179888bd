use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration rejected before any work started. Carries the field path.
    #[error("config error: {0}")]
    Config(String),

    /// A caller violated an operation contract (dimension mismatch and the like).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Point set too degenerate to triangulate (collinear or fewer than 3 points).
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    /// Region construction produced an empty interior.
    #[error("empty region interior: {0}; increase alpha or provide more data")]
    EmptyInterior(String),

    /// The NLP solver failed in a way the fallback cannot cover.
    #[error("solver failure: {0}")]
    Solver(String),

    /// A warm start that should be feasible by construction is not.
    #[error("infeasible warm start: {0}")]
    InfeasibleWarmStart(String),

    /// A closed-loop state entered the unsafe set.
    #[error("safety violation: {0}")]
    Safety(String),

    /// Certificate training diverged or produced non-finite values.
    #[error("training divergence: {0}")]
    Training(String),

    /// A numeric quantity became non-finite outside the trainer.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 solver, 4 safety, 5 training, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Solver(_) | Error::InfeasibleWarmStart(_) => 3,
            Error::Safety(_) => 4,
            Error::Training(_) => 5,
            _ => 1,
        }
    }
}

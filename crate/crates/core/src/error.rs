use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("TimeGrid invariant violated: {0}")]
    TimeGrid(String),

    #[error("weight construction rejected: {0}")]
    Weights(String),

    #[error("invalid heat problem: {0}")]
    Problem(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate transport base: {0}")]
    Degenerate(String),

    #[error("linear solver stalled: {0}")]
    SolverStalled(String),

    #[error("non-finite {what} at node {node}")]
    NonFinite { what: String, node: usize },

    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("optimizer stalled: {0}")]
    Stalled(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// Process exit code used by the command-line frontend.
    ///
    /// Configuration and validation problems map to 2, numerical failures to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Grid(_)
            | LabError::TimeGrid(_)
            | LabError::Weights(_)
            | LabError::Problem(_)
            | LabError::Precondition(_)
            | LabError::Config(_)
            | LabError::Io(_)
            | LabError::Json(_) => 2,
            LabError::Degenerate(_)
            | LabError::SolverStalled(_)
            | LabError::NonFinite { .. }
            | LabError::LineSearch(_)
            | LabError::Stalled(_) => 3,
        }
    }

    pub(crate) fn non_finite(what: impl Into<String>, node: usize) -> Self {
        LabError::NonFinite {
            what: what.into(),
            node,
        }
    }
}

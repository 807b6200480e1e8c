use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BrexError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BrexError {
    /// An input violated a documented precondition or type invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("value iteration did not converge within {sweeps} sweeps (last residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("singular policy-evaluation system")]
    Singular,

    #[error("state {state} outside the domain of size {n_states}")]
    StateOutOfDomain { state: usize, n_states: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("degenerate proposal: perturbed weights summed to zero in L1 norm twice")]
    DegenerateProposal,

    #[error("non-finite log posterior at chain initialization")]
    NonFiniteInit,

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("chain was run without keeping the raw trace")]
    MissingTrace,

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<BrexError>,
    },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl BrexError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        BrexError::Invalid(msg.into())
    }

    /// Whether the error stems from bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            BrexError::Invalid(_)
                | BrexError::Dimension { .. }
                | BrexError::StateOutOfDomain { .. }
                | BrexError::Parse { .. }
                | BrexError::Json { .. }
        )
    }
}

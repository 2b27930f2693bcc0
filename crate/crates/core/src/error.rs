use thiserror::Error;

pub type Result<T> = std::result::Result<T, QcsError>;

#[derive(Debug, Error)]
pub enum QcsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A finite window can never hold enough successes: w * m < n.
    #[error("infeasible window: {needed} packets cannot fit in {window} batches of {batch}")]
    InfeasibleWindow {
        window: u32,
        batch: u32,
        needed: u32,
    },

    /// No closed form exists for these window-problem parameters.
    #[error("no closed form: {0}")]
    Unsupported(&'static str),

    #[error("window-state space too large: {states:.3e} states exceeds {limit:.0e}")]
    StateSpaceTooLarge { states: f64, limit: f64 },

    /// A single draw of the window problem exceeded the iteration cap.
    #[error("sampler exceeded the batch iteration cap")]
    SamplerOverrun,

    /// The queue has no steady state (load at or above one).
    #[error("system overloaded: load {rho:.6} >= 1")]
    Overloaded { rho: f64 },

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("unknown figure `{0}`")]
    UnknownFigure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("bad scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl QcsError {
    /// Process exit code used by the CLI: 3 for overload, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            QcsError::Overloaded { .. } => 3,
            _ => 2,
        }
    }
}

use thiserror::Error;

/// Errors raised by the solvers, sensitivity routines and planner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("agent index {index} out of range for {n} agents")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("best-response iteration did not converge after {iterations} rounds (last change {last_change:.3e})")]
    NonConvergent { iterations: usize, last_change: f64 },

    #[error("no equilibrium: actions exceeded the divergence cap after {iterations} rounds")]
    NonExistent { iterations: usize },

    #[error("sensitivity system is singular (relative residual {residual:.3e})")]
    SingularSystem { residual: f64 },

    #[error("finite-difference oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("no feasible intervention: the baseline game has no equilibrium")]
    NoFeasibleIntervention,

    #[error("budget multiplier cannot be identified: no subsidized coordinate")]
    DegenerateMultiplier,

    #[error("action best response of agent {agent} is unbounded on [0, {cap:e}]")]
    IllPosedBR { agent: usize, cap: f64 },

    #[error("instance I/O: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

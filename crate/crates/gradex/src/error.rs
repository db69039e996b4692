//! Crate-wide error type.

/// Errors surfaced by solvers, geometry, problems, the simulator and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point violated a feasible-set membership precondition.
    #[error("infeasible point: {0}")]
    Infeasible(String),

    /// Incompatible component combination (geometry/policy/solver wiring).
    #[error("configuration error: {0}")]
    Config(String),

    /// Step-size policy preconditions violated.
    #[error("policy error: {0}")]
    Policy(String),

    /// A quantity that needs a known optimum was requested without one.
    #[error("unavailable: {0}")]
    Unavailable(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Iteration/evaluation budget exhausted before certification.
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// The simulator could not activate any agent within the retry cap.
    #[error("livelock: no responsive agent after {attempts} attempts in round {round}")]
    Livelock { attempts: usize, round: usize },

    /// A runtime self-check (prox optimality, aggregation audit, ...) failed.
    #[error("audit failed: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

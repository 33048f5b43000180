//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("degenerate branch: {0}")]
    DegenerateBranch(String),

    #[error("disconnected island: {0}")]
    DisconnectedIsland(String),

    #[error("no path between nodes {0} and {1}")]
    NoPath(String, String),

    #[error("no voltage-forming device in subgrid {0}")]
    NoFormingDevice(String),

    #[error("network solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("dead bus at {0}: |v| below PLL tracking threshold")]
    DeadBus(String),

    #[error("snapshot is not an equilibrium (derivative norm {0:.3e})")]
    NotEquilibrium(f64),

    #[error("settle timed out after {0} s without reaching equilibrium")]
    SettleTimeout(f64),

    #[error("infeasible dispatch: {0}")]
    InfeasibleDispatch(String),

    #[error("singular Jacobian in {0}")]
    SingularJacobian(String),

    #[error("wrong controller type: expected {expected}, got {got}")]
    WrongController { expected: String, got: String },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("unknown id: {0}")]
    UnknownId(String),
}

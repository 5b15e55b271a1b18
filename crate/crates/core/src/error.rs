use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("opinion index {index} out of range 1..={k}")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("opinion pair must be distinct, got ({0}, {0})")]
    SamePair(usize),

    #[error("step {got} fed after step {last}; steps must strictly increase")]
    NonMonotoneStep { last: u64, got: u64 },

    #[error("exhaustive gossip enumeration needs n <= {max}, got n = {n}")]
    EnumerationTooLarge { n: u64, max: u64 },

    #[error("state space has {states} states, cap is {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("infeasible initial configuration: {0}")]
    InfeasibleInit(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("{0}")]
    Config(String),
}

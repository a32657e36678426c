use thiserror::Error;

use crate::exchange::ExchangeError;

/// Errors surfaced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("attach point {attach} of branch {branch} references a compartment not yet placed ({placed} placed)")]
    ForwardReference { branch: usize, attach: usize, placed: usize },
    #[error("invalid morphology: {0}")]
    InvalidMorphology(String),
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, got: usize, expected: usize },
    #[error("system not assembled")]
    Unassembled,
    #[error("singular system: zero pivot at compartment {index}")]
    Singular { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("synapse slot {slot} out of range (S = {synapses})")]
    SlotOutOfRange { slot: usize, synapses: usize },
    #[error("infeasible size model: {0}")]
    InfeasibleSizes(String),
    #[error("cannot draw {requested} targets: only {available} available")]
    Connectivity { requested: usize, available: usize },
    #[error("invalid configuration key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
    #[error("trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

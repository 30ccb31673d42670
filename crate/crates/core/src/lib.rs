//! Synthesis of deterministic fault-tolerant logical-zero preparation for small
//! CSS codes: encoder, SAT-optimal verification, conditional corrections,
//! flag handling, and Pauli-frame validation.

pub mod catalog;
pub mod circuit;
pub mod code;
pub mod correct;
pub mod f2;
pub mod flags;
pub mod prep;
pub mod protocol;
pub mod sat;
pub mod sim;
pub mod verify;

pub use code::{CssCode, PauliKind, ReductionGroup, ReductionMode};
pub use f2::{BitMatrix, BitVector};
pub use protocol::{DetFtProtocol, MetricsRow, SynthOptions};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("group rank {0} exceeds enumeration guard {1}")]
    RankGuard(usize, usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown code {0:?}")]
    UnknownCode(String),
    #[error("invalid code: {0}")]
    InvalidCode(String),
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("synthesis infeasible: {0}")]
    Infeasible(String),
    #[error("solver budget exhausted")]
    Timeout,
    #[error("protocol failed the single-fault check with {0} violations")]
    NotFaultTolerant(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

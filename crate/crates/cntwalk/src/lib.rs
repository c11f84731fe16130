//! Transport of Grover coined quantum walks on carbon-nanotube graphs.
//!
//! The crate builds finite nanotube structure graphs from a chirality and a
//! length, runs the coined quantum walk (ideal or with dynamically percolated
//! edges) on the associated directed state space, constructs the analytic
//! trapped-state families that survive forever, and turns those into exact
//! asymptotic transport probabilities between a source and a sink region.

pub mod graph;
pub mod oracle;
pub mod transport;
pub mod trapped;
pub mod walk;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tube spec: {0}")]
    InvalidSpec(String),
    #[error("degenerate wrap: {0}")]
    DegenerateWrap(String),
    #[error("embedding error: {0}")]
    Embedding(String),
    #[error("subspace selection: {0}")]
    Subspace(String),
    #[error("walk setup: {0}")]
    WalkSetup(String),
    #[error("oracle refused: {0}")]
    OracleRefused(String),
    #[error("basis construction: {0}")]
    Basis(String),
    #[error("transport analysis: {0}")]
    Transport(String),
    #[error("linear algebra backend: {0}")]
    Linalg(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("refinement level {requested} exceeds maximum {max}")]
    RefinementCapacity { requested: u32, max: u32 },

    #[error("degenerate element {element}: {reason}")]
    DegenerateElement { element: usize, reason: String },

    #[error("solver error in {system}: {reason}")]
    Solver { system: String, reason: String },

    #[error("field connectivity mismatch: {0}")]
    ConnectivityMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("time step {step} (t = {time}) failed: {source}")]
    StepFailed {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

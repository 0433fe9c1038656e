use thiserror::Error;

use crate::picard::PicardTrace;

pub type Result<T, E = BsdeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BsdeError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("knot index {index} out of range (grid has knots 0..={last})")]
    KnotRange { index: usize, last: usize },

    #[error("anticipating data: {0}")]
    Anticipating(String),

    #[error("process was built on a different ensemble")]
    EnsembleMismatch,

    #[error("{context}: system is numerically singular (condition number {condition:e}); use a positive ridge")]
    Conditioning { context: String, condition: f64 },

    #[error("Picard iteration on knots {start}..={end} failed: {reason}")]
    Picard {
        start: usize,
        end: usize,
        reason: String,
        trace: Box<PicardTrace>,
    },

    #[error("driver `{name}` violates its declared Lipschitz constant {declared}: observed ratio {observed}")]
    Lipschitz {
        name: String,
        declared: f64,
        observed: f64,
    },

    #[error("no {kind} named `{name}` is registered")]
    UnknownName { kind: &'static str, name: String },

    #[error("comparison hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("ensemble cache: {0}")]
    CacheFormat(String),

    #[error("ensemble cache version {found} is incompatible with this build (expects {expected})")]
    CacheVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

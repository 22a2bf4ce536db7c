//! Crate-wide error type.

use crate::model::ValidationReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("model validation failed:\n{0}")]
    InvalidModel(ValidationReport),

    #[error("mode index {mode} out of range for {q} modes")]
    ModeOutOfRange { mode: usize, q: usize },

    #[error("self-switch in mode {mode} is not allowed")]
    SelfSwitch { mode: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("time grids differ: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("{op} requires a one-dimensional diffusion, got k = {dim}")]
    NotOneDimensional { op: &'static str, dim: usize },

    #[error("strategy enumeration refused: estimated {estimate:.3e} visits exceeds the {limit:.1e} guard")]
    EnumerationTooLarge { estimate: f64, limit: f64 },

    #[error(
        "regression basis too large: {basis_size} terms for {paths} paths (need basis <= paths/10)"
    )]
    BasisTooLarge { basis_size: usize, paths: usize },

    #[error("non-finite value in {op} at mode {mode}, step {step}")]
    NonFinite {
        op: &'static str,
        mode: usize,
        step: usize,
    },

    #[error("explicit part of the scheme is not monotone: {detail}")]
    SchemeNotMonotone { detail: String },

    #[error("export too large: {rows} rows exceeds the {limit} row guard")]
    ExportTooLarge { rows: usize, limit: usize },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

use crate::solvers::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },

    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("timestamps not strictly increasing at index {index}")]
    NonMonotone { index: usize },

    #[error("solver exceeded {max_steps} steps before reaching t={target}")]
    MaxSteps {
        max_steps: usize,
        target: f64,
        partial: Box<Trajectory>,
    },

    #[error("time {t} outside depth span [{start}, {end}]")]
    OutsideSpan { t: f64, start: f64, end: f64 },

    #[error("unknown parameter view `{0}`")]
    UnknownView(String),

    #[error("duplicate parameter view `{0}`")]
    DuplicateView(String),

    #[error("unknown {kind} `{name}`")]
    UnknownStrategy { kind: &'static str, name: String },

    #[error("particles {i} and {j} collided (distance {distance:e})")]
    Collision { i: usize, j: usize, distance: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

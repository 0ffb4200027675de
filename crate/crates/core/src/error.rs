use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size {0} must be a power of two and at least 8")]
    BadGrid(usize),
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
    #[error("mismatched grids: {0} vs {1} samples")]
    GridMismatch(usize, usize),
    #[error("mismatched jet orders: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("singular constant mode in resolvent solve (|c| = {0:e})")]
    SingularMode(f64),

    #[error("syntax error at byte {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("division by (near) zero")]
    DivisionByZero,
    #[error("non-finite result in {0}")]
    NonFiniteEval(&'static str),

    #[error("schema error at {pointer}: {msg}")]
    Schema { pointer: String, msg: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("singular Jacobian: |det| = {0:e}")]
    SingularJacobian(f64),
    #[error("delay {value} outside [0, {h}]")]
    DelayRange { value: f64, h: f64 },

    #[error("{stage}: iterate left its admissible domain ({detail})")]
    DomainExit { stage: &'static str, detail: String },
    #[error("{stage}: iteration diverged after {iterations} steps (last distance {distance:e}, contraction estimate {mu:.3})")]
    Diverged { stage: &'static str, iterations: usize, distance: f64, mu: f64 },
    #[error("tail domain violation: {0}")]
    TailDomain(String),
    #[error("quadrature did not converge (estimate {estimate:e} > {qtol:e})")]
    Quadrature { estimate: f64, qtol: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integration: {0}")]
    Integration(String),
    #[error("fit: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

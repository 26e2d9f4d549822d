use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error("invalid fractional order spec: {0}")]
    FracOrder(String),
    #[error("invalid system spec: {0}")]
    System(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("picard iteration did not converge at step {step} (relative update {residual:.3e})")]
    PicardDiverged { step: usize, residual: f64 },
    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("gram matrix condition number {0:.3e} exceeds 1e12")]
    IllConditioned(f64),
    #[error("every node was masked by the division guard")]
    AllMasked,
    #[error("rank-deficient coefficient matrix, unresolved: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("candidates cannot be told apart: {0:?}")]
    Indistinguishable(Vec<String>),
    #[error("degenerate request: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

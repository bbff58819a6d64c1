use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("monomial outside basis: {0}")]
    OutOfBasis(String),

    #[error("polynomial layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("model rejected: {0}")]
    Model(String),

    #[error("energy {energy} is not reachable from the given coordinates (radicand {radicand:e})")]
    InfeasibleEnergy { energy: f64, radicand: f64 },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("singular Jordan chain construction in degree block {degree}: {reason}")]
    SingularChain { degree: usize, reason: String },

    #[error("action inversion failed after {iterations} iterations (residual {residual:e})")]
    Inversion { iterations: usize, residual: f64 },

    #[error("action inversion failed at grid node ({i}, {k}): residual {residual:e}")]
    GridInversion { i: usize, k: usize, residual: f64 },

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("Gram matrix rank deficient (condition estimate {condition:e}); reduce n_v")]
    RankDeficient { condition: f64 },

    #[error("action magnitude {magnitude:e} too small at grid node ({i}, {k})")]
    DivisionBlowup { i: usize, k: usize, magnitude: f64 },

    #[error("small divisor at line ({n}, {m}) for action {action}: |n w1 + m w2| = {divisor:e}")]
    ResonanceObstruction { action: usize, n: i32, m: i32, divisor: f64 },

    #[error("Laurent evaluation singular: |v| = {magnitude:e}")]
    LaurentSingularity { magnitude: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("periodic point count {count} exceeds the configured limit {limit}")]
    CountExceedsLimit { count: u128, limit: usize },

    #[error("matrix is not a partially hyperbolic Anosov automorphism ({0:?})")]
    NotPartiallyHyperbolic(crate::torus::Classification),

    #[error("model is not certified invertible (margin {margin:.3e})")]
    NotCertified { margin: f64 },

    #[error("Newton inversion did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate center intersection: plane angle {angle:.3e}")]
    DegenerateIntersection { angle: f64 },

    #[error("Newton continuation diverged for a period-{period} seed (homotopy step {step:.3e})")]
    NewtonDivergence { period: usize, step: f64 },

    #[error("frame degeneracy while tracing a {0} leaf")]
    FrameDegeneracy(crate::bundles::Bundle),

    #[error("leaf tracing step underflow ({0:.3e})")]
    StepUnderflow(f64),

    #[error("shooting found no leaf intersection (residual {residual:.3e})")]
    ShootingNoIntersection { residual: f64 },

    #[error("ill-conditioned least-squares system: {0}")]
    IllConditioned(String),

    #[error("insufficient spread: {0}")]
    InsufficientSpread(String),

    #[error("conjugacy is not injective along the leaf: {0}")]
    NotInjective(String),

    #[error("Hoelder fit failure: fitted exponent {0:.4} exceeds 1.05")]
    FitFailure(f64),

    #[error("arc collapsed below resolution; last reliable pullback {last_reliable}")]
    ArcCollapse { last_reliable: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {}", .0.join("; "))]
    ConfigInvalid(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

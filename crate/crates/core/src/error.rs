use thiserror::Error;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate quadric (reciprocal condition {rcond:.3e} below {tol:.3e})")]
    Degenerate { rcond: f64, tol: f64 },

    #[error("near-defective spectrum (eigenvalue gap {gap:.3e} below {threshold:.3e})")]
    NearDefective { gap: f64, threshold: f64 },

    #[error("eigencovector {index} is isotropic (|g(e*,e*)| = {value:.3e})")]
    NullNorm { index: usize, value: f64 },

    #[error("R-family is not real (imaginary residual {residual:.3e})")]
    RealityViolation { residual: f64 },

    #[error(
        "quadrics lambda_0..lambda_N do not span S^2 T* (smallest singular value {sigma_min:.3e})"
    )]
    SingularBasis { sigma_min: f64 },

    #[error("symbol is not regular: {0}")]
    NotRegular(String),

    #[error("jet order underflow: need order {needed}, have {have}")]
    OrderUnderflow { needed: usize, have: usize },

    #[error("gauge is not invertible at the base point")]
    NonInvertibleGauge,

    #[error("operator is not regular at {} grid point(s)", points.len())]
    RegularityHole { points: Vec<Vec<f64>> },

    #[error(
        "no {needed} invariants with independent differentials (best jacobian_min {best:.3e})"
    )]
    NoIndependentInvariants { needed: usize, best: f64 },

    #[error("invariant {word} is not a function of the natural coordinates")]
    NotAFunction { word: String },

    #[error("models are built on different invariant words")]
    IncompatibleWords,

    #[error("document error: {0}")]
    Document(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Construction and certification of positive-but-not-completely-positive
//! linear maps between symmetric matrix spaces.
//!
//! The crate works with biquadratic biforms p(x, y) and the bijection
//! p_Phi(x, y) = y^T Phi(x x^T) y between such biforms and linear maps
//! Phi: S_n -> S_m. Positivity of Phi corresponds to nonnegativity of p_Phi
//! on the bi-sphere, complete positivity to p_Phi being a sum of squares.
//! The pipeline produces random nonnegative-but-not-SOS biforms from rational
//! data, certifies nonnegativity with exact rational Gram matrices, certifies
//! not-SOS with separating moment functionals, and measures the gap between
//! the two cones empirically against closed-form bounds.

pub mod exact;
pub mod polyspace;
pub mod sdp;
pub mod rng;
pub mod scalar;

use polyspace::BidegreeShape;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(BidegreeShape, BidegreeShape),
    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("solver did not reach a conclusive status: {0}")]
    Indeterminate(String),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error("generation failed after {attempts} attempts: {diagnostics}")]
    GenerationFailed { attempts: usize, diagnostics: String },
    #[error("rationalization failed: {0}")]
    RationalizationFailed(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

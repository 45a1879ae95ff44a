//! Cubic B-spline bases, curvature penalties, and penalized least squares
//! with GCV smoothing selection.

mod basis;
mod fit;

pub use basis::{BasisKind, SplineBasis};
pub use fit::{fit_penalized, DesignBlock, PenalizedFit, Smoothing};

use thiserror::Error;

#[derive(Error, Debug)]
pub enum SmoothError {
    #[error("invalid basis dimension: {0}")]
    InvalidDimension(String),
    #[error("singular penalized system: {0}")]
    SingularSystem(String),
}

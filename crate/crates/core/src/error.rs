use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The bed at the grounding line is at or above sea level, so the flotation
    /// thickness is not positive.
    #[error("grounding line at L = {length} m sits on a non-marine bed (b = {bed} m)")]
    NonMarineBed { length: f64, bed: f64 },

    #[error("state left the valid domain at t = {t}: H = {thickness}, L = {length}")]
    StateBlowup { t: f64, thickness: f64, length: f64 },

    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;

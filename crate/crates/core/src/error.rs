use thiserror::Error;

/// Errors surfaced by the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// 6D rotation input cannot be orthonormalized: first column (or the
    /// residual of the second after projection) has norm <= 1e-8.
    #[error("degenerate 6d rotation input: {0}")]
    DegenerateRotation(&'static str),

    /// Two hand centers closer than 1e-9 px; repulsion and interaction
    /// intensity are undefined there.
    #[error("hand centers are coincident (distance {0:.3e} px)")]
    CoincidentCenters(f64),

    /// Part segmentation label outside 0..=32.
    #[error("part label {0} outside 0..=32")]
    InvalidLabel(u32),

    /// Point sets unusable for similarity alignment (fewer than 3 points,
    /// zero variance, or rank-deficient cross covariance).
    #[error("degenerate point sets for similarity alignment: {0}")]
    DegenerateAlignment(&'static str),

    /// Fitting started from a state with non-finite loss.
    #[error("initial loss is not finite: {0}")]
    InitializationError(f64),

    /// Rig failed structural validation.
    #[error("invalid rig: {0}")]
    Rig(String),

    /// Mismatched argument dimensions (joint counts, channel counts, ...).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed tensor/scene/config file contents.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

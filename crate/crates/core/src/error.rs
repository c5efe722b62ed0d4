use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("half-period {target} is not commensurate with the node spacing of a grid with half-period {source_half_period}")]
    NonCommensurate { target: f64, source_half_period: f64 },
    #[error("-k^2 lies within {distance:e} of the spectrum")]
    SpectrumCollision { distance: f64 },
    #[error("diagonal Green's function nearly vanishes at node {node} (|g| = {modulus:e})")]
    NonVanishingViolated { node: usize, modulus: f64 },
    #[error("step rejected at t = {time}: relative alpha drift {drift:e} exceeds {limit:e}")]
    StepRejected { time: f64, drift: f64, limit: f64 },
    #[error("blow-up detected at t = {time}: {reason}")]
    BlowupDetected { time: f64, reason: String },
    #[error("Riccati solve did not converge (residual {residual:e})")]
    RiccatiDiverged { residual: f64 },
    #[error("degenerate fit: {usable} usable points, need at least {needed}")]
    DegenerateFit { usable: usize, needed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::InvalidInput(msg.into()))
}

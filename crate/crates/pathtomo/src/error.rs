use thiserror::Error;

/// Errors produced by state preparation, geometry planning, frame synthesis
/// and reconstruction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian at ({i},{j}): {delta:.3e} above tolerance")]
    NotHermitian { i: usize, j: usize, delta: f64 },

    #[error("trace is {trace:.6} but must be 1 within {tol:.1e}")]
    BadTrace { trace: f64, tol: f64 },

    #[error("trace magnitude {trace:.3e} too small to normalize")]
    Unnormalizable { trace: f64 },

    #[error("unphysical input: smallest eigenvalue {min_eig:.3e} below -1e-9")]
    UnphysicalInput { min_eig: f64 },

    #[error("degenerate input: spectrum is entirely non-positive")]
    DegenerateInput,

    #[error("eigendecomposition did not converge after {sweeps} sweeps")]
    EigenNonConvergence { sweeps: usize },

    #[error("rank {rank} out of range for dimension {dim}")]
    RankOutOfRange { rank: usize, dim: usize },

    #[error("non-finite value at ({i},{j})")]
    NonFinite { i: usize, j: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("path merge unsupported: shift lands two modes on ({x:.4}, {y:.4}) mm")]
    PathCollision { x: f64, y: f64 },

    #[error("empty state: every path is blocked")]
    EmptyState,

    #[error("blocked path index {index} out of range for {paths} paths")]
    BlockIndexOutOfRange { index: usize, paths: usize },

    #[error("geometry invalid: {0}")]
    InvalidGeometry(String),

    #[error("paths {i} and {j} are {dist:.4} mm apart, below 4 sigma = {min:.4} mm")]
    PathsOverlap { i: usize, j: usize, dist: f64, min: f64 },

    #[error("Golomb ruler construction undefined for d = {d}: d must be an odd prime")]
    NotOddPrime { d: usize },

    #[error("geometry exceeds field of view: point ({x:.3}, {y:.3}) mm outside sensor")]
    FieldOfView { x: f64, y: f64 },

    #[error(
        "aliasing: fringe period {period_px:.2} px below 2 px; \
         camera-plane spacing {l_mm:.3} mm exceeds Nyquist limit {limit_mm:.3} mm"
    )]
    Aliasing { period_px: f64, l_mm: f64, limit_mm: f64 },

    #[error("slice coordinate {x_mm:.3} mm maps outside the frame")]
    SliceOutOfFrame { x_mm: f64 },

    #[error("incomplete plan: no reading covers pairs {pairs:?}")]
    IncompletePlan { pairs: Vec<(usize, usize)> },

    #[error("no frame provided for plan angle {theta_deg:.4} deg")]
    MissingAngle { theta_deg: f64 },

    #[error("frame configs disagree: {what}")]
    ConfigMismatch { what: String },

    #[error("unusable reference: coherence ({i},{j}) has |S_ij|/S = {weight:.4} below 0.02")]
    UnusableReference { i: usize, j: usize, weight: f64 },

    #[error("overlapping integration disks for paths {i} and {j}")]
    DisksOverlap { i: usize, j: usize },

    #[error("bad optical config: {0}")]
    BadConfig(String),

    #[error("PGM format error: {0}")]
    PgmFormat(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

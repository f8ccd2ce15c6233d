use thiserror::Error;

/// Errors shared across the crate.
///
/// Variants are grouped by how callers are expected to react: `Config` values
/// are caller mistakes detectable before any numerics run, `Data` values mean
/// the inputs were structurally unusable, and `Numerical` values mean a
/// computation left its valid domain at runtime.
#[derive(Debug, Error)]
pub enum Error {
    /// A grid was empty, too short, or not strictly increasing.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Two objects that must share a grid or length did not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A requested evaluation point fell outside the function's domain.
    #[error("point {point} outside domain [{lo}, {hi}]")]
    OutOfDomain { point: f64, lo: f64, hi: f64 },

    /// A warping function or its derivative failed monotonicity checks.
    #[error("warping function not monotone: {0}")]
    NotMonotone(String),

    /// A vector failed the tangent-space membership test.
    #[error("not a tangent vector: {0}")]
    NotTangent(String),

    /// A geometric operation was asked to act outside its injectivity radius.
    #[error("outside injectivity radius: {0}")]
    InjectivityRadius(String),

    /// Invalid configuration (bad hyperparameter, prior, or option value).
    #[error("configuration error: {0}")]
    Config(String),

    /// Structurally unusable input data (bad CSV shape, missing columns...).
    #[error("data error: {0}")]
    Data(String),

    /// A numerical routine failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// CSV (de)serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid viewpoint: {0}")]
    InvalidViewpoint(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("primitive {index} ({shape}) extends outside the scene bounds (reach {reach:.4} >= {bounds:.4})")]
    PrimitiveOutOfBounds {
        index: usize,
        shape: String,
        reach: f64,
        bounds: f64,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty occupied region")]
    EmptyOccupiedRegion,
    #[error("close kernel must be odd, got {0}")]
    EvenKernel(usize),
    #[error("negative angle: {0}")]
    NegativeAngle(f64),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("undefined AP: no ground truths")]
    UndefinedAp,
    #[error("empty evaluation set")]
    EmptyEvaluation,
    #[error("gallery has no valid annotations")]
    EmptyGallery,
    #[error("transformed box is degenerate")]
    DegenerateBox,
    #[error("placement out of bounds: {0}")]
    PlacementOutOfBounds(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

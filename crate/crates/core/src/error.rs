use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("scene seed {seed}: could not place object {object} without overlap after {retries} attempts")]
    Placement {
        seed: u64,
        object: usize,
        retries: usize,
    },

    #[error("trajectory seed {seed}: no free start pose after {retries} attempts")]
    StartPlacement { seed: u64, retries: usize },

    #[error("pose ({x:.3}, {y:.3}, {z:.3}) lies outside the scene bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    #[error("trajectory was recorded in scene {trajectory} but scene {scene} was supplied")]
    SeedMismatch { trajectory: u64, scene: u64 },

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("non-finite values in layer {layer}")]
    NumericFailure { layer: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("query {query} has no negatives left after masking")]
    DegenerateBatch { query: usize },

    #[error("class {class} appears in the test split but not in the training split")]
    ClassAbsent { class: usize },

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

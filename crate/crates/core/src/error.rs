use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite score {value} at pixel {pixel}, class {class}")]
    NonFinite { pixel: usize, class: usize, value: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("label {label} at pixel {pixel} is out of range for {num_classes} classes")]
    LabelOutOfRange { pixel: usize, label: u8, num_classes: usize },

    #[error("invalid class catalog: {0}")]
    InvalidCatalog(String),

    #[error("invalid image-level labels: {0}")]
    InvalidLabels(String),

    #[error("invalid points: {0}")]
    InvalidPoints(String),

    #[error("point at pixel {pixel} is labeled with class {class}, which is marked absent")]
    PointClassAbsent { pixel: usize, class: u8 },

    #[error("point at pixel {pixel} is labeled with class {class}, which is not in the present set")]
    PointClassNotPresent { pixel: usize, class: u8 },

    #[error("invalid objectness prior: {0}")]
    InvalidPrior(String),

    #[error("window {index} {bbox:?} is outside a {width}x{height} image")]
    WindowOutOfBounds { index: usize, bbox: [u32; 4], width: usize, height: usize },

    #[error("invalid supervision record: {0}")]
    InvalidRecord(String),

    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),

    #[error("point {0} has no rank but rank halving was requested")]
    MissingRank(usize),

    #[error("mask has no labeled pixels")]
    EmptyMask,

    #[error("image {width}x{height} is smaller than the {kernel}x{kernel} kernel")]
    ImageTooSmall { width: usize, height: usize, kernel: usize },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unsupported supervision kind {0} for this operation")]
    UnsupportedKind(String),

    #[error("scene generation failed: {0}")]
    Placement(String),

    #[error("planted image {0:?} is missing from the batch")]
    MissingPlanted(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

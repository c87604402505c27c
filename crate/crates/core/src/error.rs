use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("need at least 2 correspondences, got {0}")]
    TooFewCorrespondences(usize),

    #[error("correspondences are degenerate (coincident source points)")]
    DegenerateCorrespondences,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("mask {0} cannot be covered by any candidate tile")]
    Uncoverable(usize),

    #[error(
        "admission control: {items} tiles cannot be packed onto a {canvas}x{canvas} canvas \
         even after {relaxations} lower-bound relaxations; assign fewer camera streams"
    )]
    AdmissionControl {
        items: usize,
        canvas: u32,
        relaxations: u32,
    },

    #[error("unknown application profile `{0}`")]
    UnknownProfile(String),

    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no source frame for camera {0}")]
    MissingSource(usize),

    #[error("ground-truth text is empty")]
    EmptyTruth,

    #[error("PS delay {delay:.3}s is not shorter than the PS period {period:.3}s")]
    PsOverrun { delay: f64, period: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("TOML: {0}")]
    Toml(#[from] toml::de::Error),
}

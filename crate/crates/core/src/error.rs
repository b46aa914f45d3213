use thiserror::Error;

/// Errors produced by the projection, solver and estimation routines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("point lies on or behind the camera plane (depth {depth:e})")]
    NegativeDepth { depth: f64 },
    #[error("no scan time inside the frame window [0, {window:e}] s")]
    NoScanTime { window: f64 },
    #[error("singular rolling-shutter denominator ({value:e})")]
    Singularity { value: f64 },
    #[error("motion is not {expected}")]
    UnsupportedMotion { expected: &'static str },
    #[error("slits are degenerate: {0}")]
    DegenerateSlits(&'static str),
    #[error("no spectral peak above the noise floor")]
    NoPeak,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

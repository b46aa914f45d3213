use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rscam::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 1 for configuration and usage problems, 2 for numerical failures.
    pub fn exit_code(&self) -> ExitCode {
        use rscam::Error as E;
        let numerical = matches!(
            self,
            CliError::Core(
                E::NegativeDepth { .. } | E::NoScanTime { .. } | E::Singularity { .. } | E::NoPeak | E::DegenerateSlits(_)
            )
        );
        ExitCode::from(if numerical { 2 } else { 1 })
    }
}

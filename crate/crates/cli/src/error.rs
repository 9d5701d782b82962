use std::path::PathBuf;

use deeptherm::analysis::AnalysisError;
use deeptherm::embedding::EmbedError;
use deeptherm::factorization::FactorError;
use deeptherm::hsic::HsicError;
use deeptherm::io::IoError;
use deeptherm::phantom::PhantomError;
use deeptherm::thermal_data::DataError;
use deeptherm::thermomics::ThermomicsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("missing upstream artifact {path} (run `{stage}` first)")]
    MissingUpstreamArtifact { path: PathBuf, stage: &'static str },
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// Process exit code: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::MissingUpstreamArtifact { .. } | CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        match e {
            PhantomError::Data(d) => d.into(),
            other => CliError::ConfigInvalid(other.to_string()),
        }
    }
}

impl From<FactorError> for CliError {
    fn from(e: FactorError) -> Self {
        match e {
            FactorError::NegativeInput { .. } => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::MissingReference | EmbedError::MaskShape { .. } | EmbedError::ShapeMismatch { .. } => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<ThermomicsError> for CliError {
    fn from(e: ThermomicsError) -> Self {
        match e {
            ThermomicsError::MaskShape { .. } | ThermomicsError::Table(_) => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<HsicError> for CliError {
    fn from(e: HsicError) -> Self {
        match e {
            HsicError::BlockTooSmall { .. } => CliError::ConfigInvalid(format!("selection.delta: {e}")),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Data(_) | AnalysisError::MaskShape { .. } | AnalysisError::LengthMismatch(..) => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

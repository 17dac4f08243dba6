use txncat_core::augment::AugmentError;
use txncat_core::calibrate::CalibrateError;
use txncat_core::evaluate::EvaluateError;
use txncat_core::ingest::IngestError;
use txncat_core::model::ModelError;

/// Failure classes of the command line; each maps to one exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("remote generator error: {0}")]
    Remote(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadInput(_) => 2,
            CliError::Config(_) => 3,
            CliError::Remote(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::BadInput(format!("{}: {e}", path.display()))
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::BadInput(e.to_string())
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::MissingCredential(_)
            | AugmentError::LexiconMissing(_)
            | AugmentError::InvalidLexicon(_)
            | AugmentError::InvalidOverrides(_) => CliError::Config(e.to_string()),
            e if e.is_remote() => CliError::Remote(e.to_string()),
            AugmentError::ZeroCount(_) | AugmentError::EmptyInput | AugmentError::Io { .. } => {
                CliError::BadInput(e.to_string())
            }
            e => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::Config(e.to_string()),
            ModelError::Diverged { .. } | ModelError::NonFiniteInput => CliError::Internal(e.to_string()),
            _ => CliError::BadInput(e.to_string()),
        }
    }
}

impl From<CalibrateError> for CliError {
    fn from(e: CalibrateError) -> Self {
        CliError::BadInput(e.to_string())
    }
}

impl From<EvaluateError> for CliError {
    fn from(e: EvaluateError) -> Self {
        match e {
            EvaluateError::Ingest(e) => e.into(),
            EvaluateError::Model(e) => e.into(),
            EvaluateError::Calibrate(e) => e.into(),
            EvaluateError::Augment(e) => e.into(),
            EvaluateError::InvalidConfig(_) | EvaluateError::InvalidFraction(_) | EvaluateError::KExceedsClasses { .. } => {
                CliError::Config(e.to_string())
            }
            e => CliError::BadInput(e.to_string()),
        }
    }
}

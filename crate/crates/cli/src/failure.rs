use cvsf_core::Error;

/// Run failures, one per exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Identification(String),
    #[error("{0}")]
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Identification(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e.root() {
            Error::InvalidInput(_)
            | Error::InvalidRegion(_)
            | Error::OutOfIdentifiedRange { .. }
            | Error::DegenerateBins(_)
            | Error::DegenerateRange(_)
            | Error::InvalidDgp(_) => Failure::Usage(message),
            Error::Data { .. } | Error::Domain(_) | Error::Io(_) | Error::Csv(_) => {
                Failure::Data(message)
            }
            Error::RankDeficient { .. } | Error::Identification(_) => {
                Failure::Identification(message)
            }
            Error::NonConvergence { .. } | Error::Bootstrap { .. } | Error::AtLevel { .. } => {
                Failure::Numeric(message)
            }
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

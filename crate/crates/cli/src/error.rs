use absgen::Error;
use thiserror::Error as ThisError;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_MISSING_FILE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_MISMATCH: u8 = 4;
pub const EXIT_N_WAY: u8 = 5;
pub const EXIT_CHECKSUM: u8 = 6;
pub const EXIT_FORMAT: u8 = 7;
pub const EXIT_USAGE: u8 = 64;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("n_way {n_way} exceeds the {available} probe classes with enough samples")]
    NWay { n_way: usize, available: usize },
    #[error("parameters do not match the configured model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::NWay { .. } => EXIT_N_WAY,
            CliError::Mismatch(_) => EXIT_MISMATCH,
            CliError::Core(e) => match e {
                Error::Io { .. } => EXIT_MISSING_FILE,
                Error::Checksum { .. } => EXIT_CHECKSUM,
                Error::Format { .. } | Error::Consistency(_) | Error::Json(_) => EXIT_FORMAT,
                _ => EXIT_RUNTIME,
            },
        }
    }
}

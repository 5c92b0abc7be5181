use std::io;

/// Errors raised anywhere in the watermarking toolkit.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A tensor produced during sampling or inversion contained NaN/inf.
    #[error("numeric failure at timestep {timestep:?}: {message}")]
    NumericFailure {
        timestep: Option<usize>,
        message: String,
    },

    /// The input carries no usable signal (e.g. an all-zero masked spectrum).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(timestep: Option<usize>, msg: impl Into<String>) -> Self {
        Error::NumericFailure {
            timestep,
            message: msg.into(),
        }
    }

    /// Wraps an I/O failure on `path`, keeping its kind and naming the file.
    pub fn io_at(path: &std::path::Path, e: io::Error) -> Self {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    /// Process exit code used by the CLI: 1 invalid-argument, 2 numeric-failure, 3 io-error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::DegenerateInput(_) => 1,
            Error::NumericFailure { .. } => 2,
            Error::Io(_) | Error::Image(_) => 3,
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Config(format!("csv: {other:?}")),
        }
    }
}

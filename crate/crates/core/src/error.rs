use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by the core pipeline.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    Config(String),
    /// `level` does not divide the horizon.
    Granularity { level: usize, horizon: usize },
    /// A granularity view whose metadata does not match its data.
    GranularityShape(String),
    /// Granularity list containing levels that do not divide the horizon.
    GranularityList { offending: Vec<usize>, horizon: usize },
    /// Malformed input text.
    Parse { line: usize, message: String },
    /// API used out of order (e.g. goal prediction before stage two).
    Usage(String),
    /// Loss became non-finite during training.
    Divergence { step: usize, loss: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Granularity { level, horizon } => {
                write!(f, "granularity level {level} does not divide horizon T={horizon}")
            }
            Error::GranularityShape(m) => write!(f, "granularity shape error: {m}"),
            Error::GranularityList { offending, horizon } => write!(
                f,
                "granularity list has levels not dividing T={horizon}: {offending:?}"
            ),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Divergence { step, loss } => {
                write!(f, "training diverged at step {step}: loss = {loss}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;

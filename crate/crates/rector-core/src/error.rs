use alloc::string::String;
use core::fmt;

/// Error type shared by all core modules.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid generator or training configuration.
    Config(String),
    /// Circuit split cannot be performed.
    Split(String),
    /// Tensor or parameter shapes do not line up.
    Shape(String),
    /// Invalid argument to an operation (e.g. K > number of points).
    Argument(String),
    /// Triplet sampling cannot proceed.
    Sampling(String),
    /// Training diverged; names the offending epoch.
    Training { epoch: usize, message: String },
    /// Scenario construction failed (pool too small, bad sigma).
    Scenario(String),
    /// ROC sweep over an empty or degenerate score set.
    Sweep(String),
    /// Scaling benchmark misconfigured.
    Bench(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Split(m) => write!(f, "split error: {m}"),
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Argument(m) => write!(f, "argument error: {m}"),
            Error::Sampling(m) => write!(f, "sampling error: {m}"),
            Error::Training { epoch, message } => {
                write!(f, "training error at epoch {epoch}: {message}")
            }
            Error::Scenario(m) => write!(f, "scenario error: {m}"),
            Error::Sweep(m) => write!(f, "sweep error: {m}"),
            Error::Bench(m) => write!(f, "bench error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

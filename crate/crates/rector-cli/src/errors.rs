//! Error categories that map onto the process exit codes: missing
//! inputs exit 2, invariant violations exit 3, anything else exits 1.

use std::fmt;

#[derive(Debug)]
pub struct MissingInput(pub String);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing input: {}", self.0)
    }
}

impl std::error::Error for MissingInput {}

#[derive(Debug)]
pub struct InvariantViolation(pub String);

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant violation: {}", self.0)
    }
}

impl std::error::Error for InvariantViolation {}

pub fn missing(what: impl Into<String>) -> anyhow::Error {
    MissingInput(what.into()).into()
}

pub fn invariant(what: impl Into<String>) -> anyhow::Error {
    InvariantViolation(what.into()).into()
}

/// Exit code for an error chain, by the categories above.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<MissingInput>() {
            return 2;
        }
        if cause.is::<InvariantViolation>() {
            return 3;
        }
    }
    1
}

//! Error types shared across the crate.

/// Crate-wide error enum. Variants map onto the CLI exit-code classes:
/// configuration/shape/target problems are usage errors (exit 2), missing
/// files or lookups are I/O errors (exit 3), and non-finite numerics are
/// runtime failures (exit 4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("invalid target distribution: {0}")]
    Target(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code class used by the CLI: config = 2, io = 3, numeric = 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Shape(_)
            | Error::DegenerateMask(_)
            | Error::Target(_)
            | Error::Parse(_) => 2,
            Error::Io(_) | Error::Lookup(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable_per_class() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Shape("x".into()).exit_code(), 2);
        assert_eq!(Error::Lookup("x".into()).exit_code(), 3);
        assert_eq!(Error::Io(std::io::Error::other("x")).exit_code(), 3);
        assert_eq!(Error::Numeric("x".into()).exit_code(), 4);
    }
}

use std::fmt;

use eit_core::{EitError, GuidanceError};

/// Failure categories, each with its own exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Io,
    Parse,
    Invariant,
    Numeric,
    Guidance,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Parse => 4,
            Kind::Invariant => 5,
            Kind::Numeric => 6,
            Kind::Guidance => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Io => "io",
            Kind::Parse => "parse",
            Kind::Invariant => "invariant",
            Kind::Numeric => "numeric",
            Kind::Guidance => "guidance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: Kind,
    pub msg: String,
}

impl CliError {
    pub fn new(kind: Kind, msg: impl Into<String>) -> Self {
        CliError {
            kind,
            msg: msg.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind.code()
    }
}

/// `error: kind=<kind> code=<n> msg="<escaped message>"`, always one line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "error: kind={} code={} msg={:?}",
            self.kind.name(),
            self.code(),
            self.msg
        )
    }
}

impl From<EitError> for CliError {
    fn from(e: EitError) -> Self {
        let kind = match &e {
            EitError::Io { .. } => Kind::Io,
            EitError::Parse(_) => Kind::Parse,
            EitError::Invariant { .. } | EitError::Layout(_) | EitError::Dimension(_) => {
                Kind::Invariant
            }
            EitError::Assembly(_) | EitError::Numeric { .. } => Kind::Numeric,
            EitError::Guidance(_) => Kind::Guidance,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<GuidanceError> for CliError {
    fn from(e: GuidanceError) -> Self {
        CliError::new(Kind::Guidance, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_err(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::new(Kind::Io, format!("{}: {e}", path.display()))
}

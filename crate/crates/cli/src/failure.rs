use std::fmt;
use std::process::ExitCode;

use stochhom::Error;

/// Why a command did not succeed, mapped onto the exit code.
#[derive(Debug)]
pub enum Failure {
    Invariant(String),
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Invariant(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invariant(m) => write!(f, "invariant violated: {m}"),
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(_) | Error::Shape { .. } | Error::Domain(_) | Error::Window(_) | Error::Json(_) => {
                Failure::Config(e.to_string())
            }
            Error::Io(_) => Failure::Config(e.to_string()),
            Error::Numerical { .. } | Error::RadiusTooSmall { .. } | Error::Nonsmooth(_) | Error::TableCoverage(_) => {
                Failure::Numerical(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(format!("json: {e}"))
    }
}

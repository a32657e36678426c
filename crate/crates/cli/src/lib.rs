//! Command implementations behind the `hinesim` binary.

pub mod commands;
pub mod config;
pub mod launch;
pub mod sweep;
pub mod validate;

use std::fmt;

use hinesim_core::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const TRANSPORT: i32 = 3;
    pub const VALIDATION: i32 = 4;
}

/// A command failure tagged with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }

    pub fn validation(msg: impl fmt::Display) -> Self {
        Self::new(exit::VALIDATION, anyhow::anyhow!("{msg}"))
    }

    pub fn config(key: &str, reason: impl fmt::Display) -> Self {
        Self::new(exit::CONFIG, Error::Config { key: key.into(), reason: reason.to_string() })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } | Error::InfeasibleSizes(_) | Error::Connectivity { .. } => exit::CONFIG,
            Error::Exchange(_) => exit::TRANSPORT,
            _ => exit::OTHER,
        };
        Self::new(code, e)
    }
}

impl From<hinesim_core::ExchangeError> for Failure {
    fn from(e: hinesim_core::ExchangeError) -> Self {
        Error::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(exit::OTHER, e)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

#[cfg(test)]
mod tests {
    use super::*;
    use hinesim_core::ExchangeError;

    #[test]
    fn exit_code_classes() {
        let c: Failure = Error::Config { key: "workers".into(), reason: "must be >= 1".into() }.into();
        assert_eq!(c.code, exit::CONFIG);
        assert!(c.to_string().contains("workers"));
        let t: Failure = ExchangeError::PeerDisconnected { rank: 3, reason: "eof".into() }.into();
        assert_eq!(t.code, exit::TRANSPORT);
        assert!(t.to_string().contains('3'));
        assert_eq!(Failure::validation("x").code, exit::VALIDATION);
    }
}

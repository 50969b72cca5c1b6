use thiserror::Error;

/// Errors raised by the numerical modules.
///
/// Every variant carries the module it originated in so that front ends can
/// print module-qualified codes (see [`Error::code`]).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{module}: argument outside the domain: {detail}")]
    Domain { module: &'static str, detail: String },

    #[error("{module}: result not representable: {detail}")]
    Overflow { module: &'static str, detail: String },

    #[error("{module}: no convergence ({detail}); achieved error estimate {achieved:e}")]
    NonConvergence {
        module: &'static str,
        detail: String,
        achieved: f64,
    },

    #[error("{module}: invalid configuration: {detail}")]
    Config { module: &'static str, detail: String },

    #[error("{module}: insufficient data: {detail}")]
    InsufficientData { module: &'static str, detail: String },
}

impl Error {
    pub(crate) fn domain(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn overflow(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Overflow {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Config {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn insufficient(module: &'static str, detail: impl Into<String>) -> Self {
        Error::InsufficientData {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn non_convergence(
        module: &'static str,
        detail: impl Into<String>,
        achieved: f64,
    ) -> Self {
        Error::NonConvergence {
            module,
            detail: detail.into(),
            achieved,
        }
    }

    /// Module-qualified machine code, e.g. `special_functions.overflow`.
    pub fn code(&self) -> String {
        let (module, kind) = match self {
            Error::Domain { module, .. } => (module, "domain"),
            Error::Overflow { module, .. } => (module, "overflow"),
            Error::NonConvergence { module, .. } => (module, "non_convergence"),
            Error::Config { module, .. } => (module, "config"),
            Error::InsufficientData { module, .. } => (module, "insufficient_data"),
        };
        format!("{module}.{kind}")
    }

    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numeric_failure(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Overflow { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by binprobe computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sample: at least one probe is required")]
    EmptySample,

    #[error("channel saturated: every probe observed a packet, gap rate is unidentifiable")]
    Saturated,

    #[error("root search did not converge after {steps} steps")]
    NoConvergence { steps: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("grid too coarse: {0}")]
    Resolution(String),

    #[error(
        "series did not converge after {terms} terms (partial sum {partial_sum}, last increment {last_increment})"
    )]
    SeriesDiverged {
        terms: usize,
        partial_sum: f64,
        last_increment: f64,
    },

    #[error("no spacing meets tolerance (best H = {best_h}, gap = {best_gap})")]
    NoSpacing { best_h: f64, best_gap: f64 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("probe at t = {t} lies beyond the trace end {total}")]
    ProbeOutOfRange { t: f64, total: f64 },
}

impl Error {
    /// Numeric failures, as opposed to bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::SeriesDiverged { .. }
                | Error::NoSpacing { .. }
                | Error::ModelMismatch(_)
                | Error::Saturated
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

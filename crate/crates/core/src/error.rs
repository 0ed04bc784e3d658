use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("LF solver did not converge for rd = {rd}: {what}")]
    Solver { rd: f64, what: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} is outside its domain")]
    OutOfDomain { what: &'static str, value: f64 },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("frame grid covers {covered} samples but the signal has {len}")]
    CoverageGap { covered: usize, len: usize },

    #[error("reference signal is all zeros")]
    ZeroReference,

    #[error("non-finite gradient for {param}[{index}]")]
    NonFiniteGradient { param: String, index: usize },

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize, trace: Vec<f64> },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            got,
        })
    }
}

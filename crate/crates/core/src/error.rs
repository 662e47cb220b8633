use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("negative concentration {0}")]
    NegativeConcentration(f64),

    #[error("state has {found} components, configuration expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("coupling maps are undefined without diffusion (d = 0)")]
    ZeroDiffusion,

    #[error("{operation} requires {requirement}")]
    Unsupported {
        operation: &'static str,
        requirement: &'static str,
    },

    /// Scan trace is the list of `(s1, g(s1))` samples that were inspected.
    #[error("no sign change of g found on [{lo}, {hi}] after {} samples", scan.len())]
    NoSignChange {
        lo: f64,
        hi: f64,
        scan: Vec<(f64, f64)>,
    },

    #[error("equilibrium certificate broken: det(Gamma) = {det_gamma} is not negative")]
    BrokenCertificate { det_gamma: f64 },

    #[error("step size underflow at t = {t} (h = {h})")]
    StepSizeUnderflow { t: f64, h: f64, last_state: Vec<f64> },

    #[error("empty grid `{0}`")]
    EmptyGrid(&'static str),

    #[error("at {name} = {value}: {source}")]
    AtParameter {
        name: &'static str,
        value: f64,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }

    /// Wraps the error with the parameter value that produced it.
    pub fn at(self, name: &'static str, value: f64) -> Self {
        Error::AtParameter {
            name,
            value,
            source: Box::new(self),
        }
    }
}

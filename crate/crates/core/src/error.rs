use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {}", format_violations(.0))]
    InvalidSpec(Vec<Violation>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("momentum out of range: |nu.y| = {exponent:.3e} exceeds {limit}")]
    MomentumOverflow { exponent: f64, limit: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("non-finite state at t = {t} (last valid state {last_state:?})")]
    BlowUp { t: f64, last_state: Vec<f64> },

    #[error("reducible chain; communicating classes {classes:?}")]
    Reducible { classes: Vec<Vec<usize>> },

    #[error("probability {value:.3e} at state {state} went negative at t = {t}; reduce dt")]
    NegativeProbability { state: usize, value: f64, t: f64 },
}

impl Error {
    /// Input problems (bad model, bad arguments, a reducible chain) as
    /// opposed to numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::Reducible { .. }
        )
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

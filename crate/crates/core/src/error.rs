use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::jet::JetError;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("integration blew up immediately; last valid point x = {last_valid}")]
    BlowUp { last_valid: f64 },
    #[error("x = {x} lies outside [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("shooting failed: {0}")]
    Shooting(String),
    #[error("reduction failed: {0}")]
    Reduction(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("monotonicity violated: dK/dz_top = {value} at x = {x} (segment parameter t = {t})")]
    Monotonicity { x: f64, t: f64, value: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

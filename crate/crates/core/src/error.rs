use thiserror::Error;

use crate::grid::GridError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),

    #[error("ODE step size underflow at x = {x} (lambda = {lambda})")]
    StepUnderflow { x: f64, lambda: f64 },

    #[error("expected {expected} band crossings below {cutoff}, found {found}")]
    MissedRoot {
        expected: usize,
        found: usize,
        cutoff: f64,
        /// `(λ, Δ(λ))` samples of the scan that located the crossings.
        scan: Vec<(f64, f64)>,
    },

    #[error("interlacing violated in gap {gap}: {mu} not in [{lo}, {hi}]")]
    Interlacing { gap: usize, lo: f64, mu: f64, hi: f64 },

    #[error("action quadrature for gap {gap} did not converge (last change {change:e})")]
    Quadrature { gap: usize, change: f64 },

    #[error("{0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("blow-up at t = {t}: norm {norm:e} exceeds ceiling {ceiling:e}")]
    BlowUp { t: f64, norm: f64, ceiling: f64 },

    #[error("resolution failure: {0}")]
    Resolution(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

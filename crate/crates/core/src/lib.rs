//! Numerical laboratory for the periodic zero-mean KdV equation
//!
//! ```text
//! u_t = -u_xxx + 6 u u_x,   x ∈ ℝ/ℤ,   ∫ u dx = 0
//! ```
//!
//! and its spectral (Hill operator) and action-angle structure.

pub mod averaging;
pub mod birkhoff;
pub mod config;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod hill;
pub mod io;
pub mod kdvflow;
pub mod ode;
pub mod roots;
pub mod stochastic;
pub mod verify;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{Error, Result};
pub use experiment::{run, RunReport};
pub use grid::{FourierField, GridError, MeanFree, ModeVector};
pub use hill::HillSpectrum;
pub use birkhoff::ActionSpectrum;
pub use kdvflow::{Perturbation, PerturbationKind, TrajectoryRecord};
pub use stochastic::{EnsembleResult, NoiseSpec};
pub use verify::{verify_suite, Level, VerifyReport};

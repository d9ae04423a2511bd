//! Experiment harness for `dpstat-core`: CSV datasets, seeded synthetic
//! data, grid sweeps with reproducible random streams, and log-log fits.

pub mod check;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod io;
pub mod rng;
pub mod synth;

pub use config::{Algorithm, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ResultRow, RunStatus};
pub use fit::{scaling_fit, ScalingFit};

//! File formats, experiment orchestration and the `ecgi-sir` command line on
//! top of [`ecgi_sir_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use config::ExperimentConfig;
pub use error::{AppError, Result};

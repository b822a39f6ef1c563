//! Command line, study configuration and Monte Carlo study runner for the
//! `volrank` library.

pub mod cli;
pub mod config;
pub mod error;
pub mod study;

pub use config::{KnChoice, StudyConfig};
pub use error::HarnessError;
pub use study::{aggregate, run_study, write_outputs, StudyResult};

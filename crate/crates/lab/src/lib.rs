//! Orchestration of the consistency experiments: configuration, seeded
//! ladder runs and deterministic CSV/JSON reports.

pub mod config;
pub mod context;
pub mod error;
pub mod report;
pub mod seed;
pub mod stage;
pub mod stages;
pub mod stats;

mod run;

pub use config::ExperimentConfig;
pub use error::{LabError, LabResult};
pub use run::{resolve_threads, run, Outputs, RunOutcome, THREADS_ENV};
pub use stage::Stage;

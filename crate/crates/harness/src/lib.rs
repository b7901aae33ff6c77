//! Experiment harness: configuration, restoration experiments, verification
//! checks and report emission.

pub mod config;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod record;
pub mod report;
pub mod train;
pub mod verify;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use record::{CheckResult, RunRecord};
pub use report::ReportFormat;
pub use verify::{run_verify, VerifyOptions};

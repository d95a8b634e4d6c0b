//! Closed-loop experiments around the data-driven controller: configuration,
//! simulation with and without poisoning, metrics, and the report of
//! adjoint system sizes.

pub mod closed_loop;
pub mod config;
pub mod metrics;
pub mod output;
pub mod sizes;

pub use closed_loop::{run_closed_loop, Experiment, ReplanRecord, RunError, RunResult, StepRecord};
pub use config::{load_config, AttackMode, ConfigError, ExperimentConfig};
pub use metrics::{compute_metrics, Summary};

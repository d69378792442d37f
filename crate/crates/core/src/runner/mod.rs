//! Experiment orchestration around the library: configuration, training
//! runs, sample-rate sweeps, theory verification and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod sweep;
pub mod verify;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{ConfigError, ExperimentConfig, Mode};
pub use experiment::{run_experiment, run_experiment_from, RunError, RunOutcome};
pub use metrics::{MetricsRow, Summary};
pub use sweep::{run_sweep, SweepOutcome};
pub use verify::{run_verify, VerifyReport};

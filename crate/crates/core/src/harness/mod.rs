//! Experiment orchestration: configuration, the training loop, persistence,
//! sweeps and post-hoc analysis.

pub mod analyze;
pub mod config;
pub mod diagnose;
pub mod log;
pub mod snapshot;
pub mod summary;
pub mod sweep;
pub mod train;

pub use analyze::{analyze_snapshots, DriftReport};
pub use config::{apply_override, DiagnoseConfig, Method, ModelConfig, RunConfig};
pub use diagnose::{diagnose, diagnose_at, DiagnoseReport};
pub use summary::{replay_summary, summarize, RunSummary};
pub use sweep::{sweep, SweepAxis, SweepTable};
pub use train::{run_all, train_run, write_run, RunOutput, Trainer};

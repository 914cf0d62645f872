//! Evolving parameter isolation for continual fine-tuning.
//!
//! Tracks an online, exponentially smoothed squared-gradient importance
//! signal, normalises it per parameter group, and periodically re-selects a
//! top-p% set of protected coordinates whose updates are masked out of an
//! AdamW step. Baselines, ablation strategies and drift/forgetting
//! diagnostics share the same plumbing so they can be compared on seeded
//! synthetic task streams.

pub mod epi;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tasks;

pub use error::{EpiError, Result};
pub use params::{Group, ParamStore, Partition};
pub use rng::{Rng, SeedTree};

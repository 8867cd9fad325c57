//! Command-line front end: configuration files, experiment orchestration
//! (disorder averaging, parameter sweeps, bounded parallelism) and artifact
//! persistence around [`prethermal_core`].
//!
//! Everything a run writes goes into one output directory together with a
//! [`manifest::RunManifest`] listing every artifact, the resolved per-job
//! seeds and coarse wall-clock timings. Jobs are pure functions of
//! `(config, job index)`, so results are byte-identical regardless of the
//! worker-pool size.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod pool;

pub use config::{AnalysisRequest, ConfigFile, ExperimentConfig, SweepParameter, SweepSpec};
pub use error::{exit_code, CliError};
pub use manifest::{JobSeeds, RunManifest};

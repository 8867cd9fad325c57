//! Run manifest: the single provenance record written next to every
//! artifact set.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Seeds actually used by one job (one realization of one sweep point).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSeeds {
    pub job: u64,
    pub lattice_seed: u64,
    pub disorder_seed: u64,
}

/// Provenance for one command invocation. Every file the command wrote into
/// the output directory is listed in `artifacts`, including this manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// SHA-256 of the resolved config's canonical JSON (covers CLI
    /// overrides); absent for commands that run without a config.
    pub config_sha256: Option<String>,
    pub master_seed: u64,
    /// How per-job seeds derive from the master seed.
    pub seed_scheme: String,
    pub job_seeds: Vec<JobSeeds>,
    pub artifacts: Vec<String>,
    /// Coarse wall-clock phase timings in seconds. Timings vary between
    /// runs; everything else in the manifest is deterministic.
    pub timings_s: BTreeMap<String, f64>,
}

pub const SEED_SCHEME: &str =
    "job j: lattice=job_seed(master,2j), disorder=job_seed(master,2j+1); fixed section seeds override";

impl RunManifest {
    pub fn new(command: &str, master_seed: u64, config_sha256: Option<String>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256,
            master_seed,
            seed_scheme: SEED_SCHEME.to_string(),
            job_seeds: Vec::new(),
            artifacts: Vec::new(),
            timings_s: BTreeMap::new(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(CliError::runtime)
    }
}

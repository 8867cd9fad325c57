//! Output directory wrapper that records every artifact as it is written,
//! so the manifest completeness invariant holds by construction.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::CliError;
use crate::manifest::RunManifest;

pub struct OutputDir {
    root: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, manifest: RunManifest) -> Result<Self, CliError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            manifest,
            started: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_mut(&mut self) -> &mut RunManifest {
        &mut self.manifest
    }

    pub fn path_of(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_string(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        std::fs::write(self.root.join(name), text)?;
        self.manifest.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
        text.push('\n');
        self.write_string(name, &text)
    }

    /// Record a wall-clock phase duration since the last mark.
    pub fn mark_phase(&mut self, phase: &str) {
        let elapsed = self.started.elapsed().as_secs_f64();
        self.started = Instant::now();
        self.manifest.timings_s.insert(phase.to_string(), elapsed);
    }

    /// Write the manifest itself (listed among its own artifacts) and
    /// return the completed record.
    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.artifacts.push("manifest.json".to_string());
        self.manifest.artifacts.sort();
        self.manifest.artifacts.dedup();
        let mut text =
            serde_json::to_string_pretty(&self.manifest).map_err(CliError::runtime)?;
        text.push('\n');
        std::fs::write(self.root.join("manifest.json"), text)?;
        Ok(self.manifest)
    }
}

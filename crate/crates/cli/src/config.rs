//! TOML configuration surface and its resolution into core module types.
//!
//! A config file has up to seven sections: `lattice`, `disorder`,
//! `sequence`, `sweep`, `acquisition`, `analysis`, `run`. Unknown keys
//! anywhere are errors. Each subcommand states which sections it needs;
//! everything else may be omitted.
//!
//! Seeds: when `lattice.rng_seed` (or `disorder.rng_seed`) is given, that
//! part is frozen across realizations. Omitted seeds are derived from
//! `run.master_seed` per job; see [`ExperimentConfig::job_seeds`] for the
//! exact scheme, which is also recorded in every manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prethermal_core::constants::MAX_DENSE_SPINS;
use prethermal_core::lattice::{DisorderDistribution, DisorderModel, LatticeConfig};
use prethermal_core::propagation::{PulseModel, PulseSequenceSpec};
use prethermal_core::seed::job_seed;
use prethermal_core::AcquisitionConfig;

use crate::error::CliError;
use crate::manifest::JobSeeds;

/// Analysis names accepted in `analysis.requested` and on `analyze`.
pub const KNOWN_ANALYSES: [&str; 6] = [
    "stretched",
    "multiexp",
    "lifetime",
    "cusp",
    "segmentation",
    "spectrum",
];

// ---------------------------------------------------------------------------
// Raw TOML surface
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub lattice: Option<LatticeSection>,
    pub disorder: Option<DisorderSection>,
    pub sequence: Option<SequenceSection>,
    pub sweep: Option<SweepSection>,
    pub acquisition: Option<AcquisitionSection>,
    pub analysis: Option<AnalysisSection>,
    pub run: Option<RunSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub abundance: f64,
    pub supercell_extent: usize,
    /// Freezes the site draw across realizations when present.
    pub rng_seed: Option<u64>,
    pub lattice_constant_nm: Option<f64>,
    pub b0_direction: Option<[f64; 3]>,
    pub max_spins: Option<usize>,
    pub coupling_cutoff_radius_nm: Option<f64>,
    /// Demand exactly this many occupied sites (resampling the occupancy
    /// draw up to `max_attempts` times).
    pub spin_count: Option<usize>,
    pub max_attempts: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSection {
    pub variance_khz2: f64,
    /// "gaussian" (default) or "none".
    pub distribution: Option<String>,
    /// Freezes the field draw across realizations when present.
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    pub flip_angle_rad: f64,
    pub spacing_s: f64,
    pub pulse_count: usize,
    pub pulse_width_s: Option<f64>,
    pub acquisition_window_s: Option<f64>,
    /// "delta" or "finite"; defaults to delta for zero width and finite
    /// otherwise.
    pub pulse_model: Option<String>,
    pub ac_field: Option<AcFieldSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcFieldSection {
    pub amplitude_hz: f64,
    pub frequency_hz: f64,
    pub phase_rad: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// "tau", "theta" or "f_ac".
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub heterodyne_frequency_hz: Option<f64>,
    pub sample_interval_s: Option<f64>,
    pub window_length_s: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub polarization_scale: Option<f64>,
    pub t1_envelope_s: Option<f64>,
    /// "coherent" (default) or "random".
    pub phase_model: Option<String>,
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub requested: Vec<String>,
    pub alpha_fixed: Option<f64>,
    pub multiexp_terms: Option<usize>,
    pub smoothing_window_s: Option<f64>,
    pub epsilon_infinity: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub realizations: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub master_seed: Option<u64>,
    pub workers: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

// ---------------------------------------------------------------------------
// Resolved experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Tau,
    Theta,
    FAc,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRequest {
    pub requested: Vec<String>,
    pub alpha_fixed: Option<f64>,
    pub multiexp_terms: usize,
    pub smoothing_window_s: Option<f64>,
    pub epsilon_infinity: Option<f64>,
}

impl Default for AnalysisRequest {
    fn default() -> Self {
        Self {
            requested: vec!["stretched".into()],
            alpha_fixed: None,
            multiexp_terms: 2,
            smoothing_window_s: None,
            epsilon_infinity: None,
        }
    }
}

/// Fully resolved experiment: core types plus orchestration settings. The
/// manifest's config hash is the SHA-256 of this struct's canonical JSON, so
/// it covers command-line overrides as well as the file contents.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub lattice: LatticeConfig,
    pub lattice_spin_count: Option<usize>,
    pub lattice_max_attempts: usize,
    pub lattice_seed_fixed: bool,
    pub disorder: DisorderModel,
    pub disorder_seed_fixed: bool,
    pub sequence: PulseSequenceSpec,
    pub sweep: Option<SweepSpec>,
    pub realizations: usize,
    pub acquisition: Option<AcquisitionConfig>,
    pub analysis: AnalysisRequest,
    /// Orchestration only: excluded from the config hash, which identifies
    /// the experiment (outputs are independent of placement and pool size).
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub master_seed: u64,
    #[serde(skip_serializing)]
    pub workers: usize,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// Resolve a parsed file into core types, applying defaults and
    /// overrides, and validate every module precondition up front.
    pub fn resolve(file: &ConfigFile, over: &Overrides) -> Result<Self, CliError> {
        let run = file.run.clone().unwrap_or_default();
        let master_seed = over.seed.or(run.master_seed).unwrap_or(0);
        let output_dir = over
            .output
            .clone()
            .or(run.output_dir)
            .unwrap_or_else(|| PathBuf::from("out"));
        let workers = over
            .workers
            .or(run.workers)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
            .max(1);
        let realizations = run.realizations.unwrap_or(1);
        if realizations == 0 {
            return Err(CliError::config("run.realizations must be at least 1"));
        }

        let lat = file
            .lattice
            .as_ref()
            .ok_or_else(|| CliError::config("missing [lattice] section"))?;
        let lattice_seed_fixed = lat.rng_seed.is_some();
        let mut lattice =
            LatticeConfig::new(lat.abundance, lat.supercell_extent, lat.rng_seed.unwrap_or(0));
        if let Some(a) = lat.lattice_constant_nm {
            lattice.lattice_constant_nm = a;
        }
        if let Some(b) = lat.b0_direction {
            lattice.b0_direction = b;
        }
        if let Some(m) = lat.max_spins {
            lattice.max_spins = m;
        }
        if lat.coupling_cutoff_radius_nm.is_some() {
            lattice.coupling_cutoff_radius_nm = lat.coupling_cutoff_radius_nm;
        }
        lattice.validate().map_err(CliError::runtime_to_config)?;
        if let Some(n) = lat.spin_count {
            if n == 0 || n > MAX_DENSE_SPINS {
                return Err(CliError::config(format!(
                    "lattice.spin_count {n} outside 1..={MAX_DENSE_SPINS}"
                )));
            }
        }

        let disorder = match &file.disorder {
            None => DisorderModel::none(),
            Some(d) => {
                let dist = match d.distribution.as_deref() {
                    None | Some("gaussian") => DisorderDistribution::Gaussian,
                    Some("none") => DisorderDistribution::None,
                    Some(other) => {
                        return Err(CliError::config(format!(
                            "disorder.distribution '{other}' is not gaussian|none"
                        )))
                    }
                };
                DisorderModel {
                    variance_khz2: d.variance_khz2,
                    distribution: dist,
                    rng_seed: d.rng_seed.unwrap_or(0),
                }
            }
        };
        disorder.validate().map_err(CliError::runtime_to_config)?;
        let disorder_seed_fixed = file.disorder.as_ref().is_some_and(|d| d.rng_seed.is_some());

        let seq = file
            .sequence
            .as_ref()
            .ok_or_else(|| CliError::config("missing [sequence] section"))?;
        let width = seq.pulse_width_s.unwrap_or(0.0);
        let model = match seq.pulse_model.as_deref() {
            None => {
                if width == 0.0 {
                    PulseModel::Delta
                } else {
                    PulseModel::Finite
                }
            }
            Some("delta") => PulseModel::Delta,
            Some("finite") => PulseModel::Finite,
            Some(other) => {
                return Err(CliError::config(format!(
                    "sequence.pulse_model '{other}' is not delta|finite"
                )))
            }
        };
        let sequence = PulseSequenceSpec {
            flip_angle_rad: seq.flip_angle_rad,
            spacing_s: seq.spacing_s,
            pulse_width_s: width,
            acquisition_window_s: seq
                .acquisition_window_s
                .unwrap_or(seq.spacing_s - width),
            pulse_count: seq.pulse_count,
            pulse_model: model,
            ac_field: None,
        };
        let sequence = match &seq.ac_field {
            None => sequence,
            Some(ac) => sequence.with_ac_field(
                ac.amplitude_hz,
                ac.frequency_hz,
                ac.phase_rad.unwrap_or(0.0),
            ),
        };
        sequence.validate().map_err(CliError::runtime_to_config)?;

        let sweep = match &file.sweep {
            None => None,
            Some(s) => {
                let parameter = match s.parameter.as_str() {
                    "tau" => SweepParameter::Tau,
                    "theta" => SweepParameter::Theta,
                    "f_ac" => SweepParameter::FAc,
                    other => {
                        return Err(CliError::config(format!(
                            "sweep.parameter '{other}' is not tau|theta|f_ac"
                        )))
                    }
                };
                if s.values.is_empty() {
                    return Err(CliError::config("sweep.values must be nonempty"));
                }
                if parameter == SweepParameter::FAc && sequence.ac_field.is_none() {
                    return Err(CliError::config(
                        "an f_ac sweep needs a [sequence.ac_field] section",
                    ));
                }
                // Every sweep point must itself satisfy the sequence
                // preconditions; substitute and validate now, not mid-run.
                for &v in &s.values {
                    apply_sweep_value(&sequence, parameter, v)?;
                }
                Some(SweepSpec {
                    parameter,
                    values: s.values.clone(),
                })
            }
        };

        let acquisition = match &file.acquisition {
            None => None,
            Some(a) => {
                let mut acq = AcquisitionConfig::new(a.rng_seed.unwrap_or(master_seed));
                if let Some(v) = a.heterodyne_frequency_hz {
                    acq.heterodyne_frequency_hz = v;
                }
                if let Some(v) = a.sample_interval_s {
                    acq.sample_interval_s = v;
                }
                if let Some(v) = a.window_length_s {
                    acq.window_length_s = v;
                }
                if let Some(v) = a.noise_sigma {
                    acq.noise_sigma = v;
                }
                if let Some(v) = a.polarization_scale {
                    acq.polarization_scale = v;
                }
                if a.t1_envelope_s.is_some() {
                    acq.t1_envelope_s = a.t1_envelope_s;
                }
                match a.phase_model.as_deref() {
                    None | Some("coherent") => {}
                    Some("random") => acq.phase_model = prethermal_core::PhaseModel::Random,
                    Some(other) => {
                        return Err(CliError::config(format!(
                            "acquisition.phase_model '{other}' is not coherent|random"
                        )))
                    }
                }
                acq.validate().map_err(CliError::runtime_to_config)?;
                Some(acq)
            }
        };

        let analysis = match &file.analysis {
            None => AnalysisRequest::default(),
            Some(a) => {
                for name in &a.requested {
                    if !KNOWN_ANALYSES.contains(&name.as_str()) {
                        return Err(CliError::config(format!(
                            "unknown analysis '{name}'; known: {}",
                            KNOWN_ANALYSES.join(", ")
                        )));
                    }
                }
                AnalysisRequest {
                    requested: a.requested.clone(),
                    alpha_fixed: a.alpha_fixed,
                    multiexp_terms: a.multiexp_terms.unwrap_or(2),
                    smoothing_window_s: a.smoothing_window_s,
                    epsilon_infinity: a.epsilon_infinity,
                }
            }
        };

        Ok(Self {
            lattice,
            lattice_spin_count: lat.spin_count,
            lattice_max_attempts: lat.max_attempts.unwrap_or(400),
            lattice_seed_fixed,
            disorder,
            disorder_seed_fixed,
            sequence,
            sweep,
            realizations,
            acquisition,
            analysis,
            output_dir,
            master_seed,
            workers,
        })
    }

    /// Per-job seeds. Job `j` counts realizations across sweep points in
    /// row-major order (`j = point * R + r`). A fixed section seed wins;
    /// otherwise the lattice draw uses `job_seed(master, 2j)` and the
    /// disorder draw `job_seed(master, 2j + 1)`.
    pub fn job_seeds(&self, job: u64) -> JobSeeds {
        let lattice_seed = if self.lattice_seed_fixed {
            self.lattice.rng_seed
        } else {
            job_seed(self.master_seed, 2 * job)
        };
        let disorder_seed = if self.disorder_seed_fixed {
            self.disorder.rng_seed
        } else {
            job_seed(self.master_seed, 2 * job + 1)
        };
        JobSeeds {
            job,
            lattice_seed,
            disorder_seed,
        }
    }

    /// SHA-256 over the canonical JSON of the resolved config.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        format!("{:x}", hasher.finalize())
    }
}

/// The sequence at one sweep point. Validation errors are config errors:
/// they are detected before any compute starts.
pub fn apply_sweep_value(
    template: &PulseSequenceSpec,
    parameter: SweepParameter,
    value: f64,
) -> Result<PulseSequenceSpec, CliError> {
    let mut seq = template.clone();
    match parameter {
        SweepParameter::Tau => {
            // Rescale the acquisition window with the spacing so templates
            // with the default full-spacing window stay valid.
            let fill = template.acquisition_window_s / template.spacing_s;
            seq.spacing_s = value;
            seq.acquisition_window_s = fill * value;
        }
        SweepParameter::Theta => seq.flip_angle_rad = value,
        SweepParameter::FAc => {
            let ac = seq
                .ac_field
                .as_mut()
                .expect("f_ac sweep validated to have an AC field");
            ac.frequency_hz = value;
        }
    }
    seq.validate()
        .map_err(|e| CliError::config(format!("sweep value {value}: {e}")))?;
    Ok(seq)
}

impl CliError {
    /// Module validation failures during resolution are config errors.
    fn runtime_to_config(err: impl std::fmt::Display) -> Self {
        CliError::Config(err.to_string())
    }
}

//! Dilute spin lattices on diamond and their secular dipolar couplings.
//!
//! Geometry: the diamond structure is an FCC lattice with a two-atom basis,
//! eight atoms per conventional cubic cell of edge `lattice_constant_nm`.
//! A supercell of extent S contains S³ conventional cells with open
//! boundaries. Positions are in nm, in the supercell frame.
//!
//! Each site is occupied independently with probability `abundance`. The
//! secular coupling between occupied sites j and k is
//!
//! ```text
//! d_jk = (μ0/4π) ħ γ² (3 cos²β_jk − 1) / r_jk³
//! ```
//!
//! with γ the angular gyromagnetic ratio and β_jk the angle between the pair
//! vector and the static field direction `b0_direction`. The result is stored
//! in Hz, i.e. the angular-frequency value divided by 2π. For two sites
//! 0.154 nm apart along b0 this evaluates to +4.154 kHz; nearest-neighbour
//! bonds make the magic angle with b0 ∥ [100] and their couplings vanish.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{
    DIAMOND_LATTICE_CONSTANT_NM, GAMMA_C13_HZ_PER_T, HBAR, MIN_SITE_SEPARATION_NM, MU0,
};
use crate::seed::job_seed;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("invalid lattice config: {0}")]
    InvalidConfig(String),
    #[error("expected occupied count {expected:.1} exceeds max_spins {max}")]
    TooManySpins { expected: f64, max: usize },
    #[error("sites {j} and {k} are closer than {} nm", MIN_SITE_SEPARATION_NM)]
    CoincidentSites { j: usize, k: usize },
    #[error("lattice has fewer than two spins")]
    EmptyLattice,
    #[error("no realization with exactly {target} spins in {attempts} attempts")]
    TargetCountNotReached { target: usize, attempts: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed lattice file: {0}")]
    Format(#[from] serde_json::Error),
}

/// Parameters of one random lattice realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Occupancy probability per site, in [0, 1].
    pub abundance: f64,
    /// Supercell extent S in conventional cells per axis.
    pub supercell_extent: usize,
    /// Conventional cubic cell edge in nm.
    pub lattice_constant_nm: f64,
    /// Static field direction, unit norm.
    pub b0_direction: [f64; 3],
    /// Upper bound on the expected occupied count.
    pub max_spins: usize,
    /// Pairs farther apart than this are not coupled. `None` selects the
    /// default of half the supercell edge.
    pub coupling_cutoff_radius_nm: Option<f64>,
    /// Seed for the occupancy draw.
    pub rng_seed: u64,
}

impl LatticeConfig {
    /// Config with diamond defaults: natural-abundance-like dilution must be
    /// set by the caller; b0 along [100].
    pub fn new(abundance: f64, supercell_extent: usize, rng_seed: u64) -> Self {
        Self {
            abundance,
            supercell_extent,
            lattice_constant_nm: DIAMOND_LATTICE_CONSTANT_NM,
            b0_direction: [1.0, 0.0, 0.0],
            max_spins: 12,
            coupling_cutoff_radius_nm: None,
            rng_seed,
        }
    }

    /// Supercell edge length in nm.
    pub fn supercell_edge_nm(&self) -> f64 {
        self.supercell_extent as f64 * self.lattice_constant_nm
    }

    /// Cutoff radius actually applied (default: half the supercell edge).
    pub fn effective_cutoff_nm(&self) -> f64 {
        self.coupling_cutoff_radius_nm
            .unwrap_or(0.5 * self.supercell_edge_nm())
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        if !(0.0..=1.0).contains(&self.abundance) || !self.abundance.is_finite() {
            return Err(LatticeError::InvalidConfig(format!(
                "abundance {} outside [0, 1]",
                self.abundance
            )));
        }
        if self.supercell_extent == 0 {
            return Err(LatticeError::InvalidConfig(
                "supercell_extent must be at least 1".into(),
            ));
        }
        if self.lattice_constant_nm <= 0.0 || self.lattice_constant_nm.is_nan() {
            return Err(LatticeError::InvalidConfig(format!(
                "lattice_constant_nm {} must be positive",
                self.lattice_constant_nm
            )));
        }
        let norm = norm3(self.b0_direction);
        if (norm - 1.0).abs() > 1e-12 {
            return Err(LatticeError::InvalidConfig(format!(
                "b0_direction has norm {norm}, expected unit within 1e-12"
            )));
        }
        if let Some(r) = self.coupling_cutoff_radius_nm {
            if r <= 0.0 || r.is_nan() {
                return Err(LatticeError::InvalidConfig(format!(
                    "coupling_cutoff_radius_nm {r} must be positive"
                )));
            }
        }
        if self.max_spins < 2 {
            return Err(LatticeError::InvalidConfig(
                "max_spins must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Normalize a direction vector; errors on (near-)zero input.
pub fn unit_direction(dir: [f64; 3]) -> Result<[f64; 3], LatticeError> {
    let n = norm3(dir);
    if n <= 1e-12 || !n.is_finite() {
        return Err(LatticeError::InvalidConfig(
            "b0_direction must be a nonzero finite vector".into(),
        ));
    }
    Ok([dir[0] / n, dir[1] / n, dir[2] / n])
}

/// Distribution of static on-site dephasing fields c_j.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisorderDistribution {
    Gaussian,
    None,
}

/// On-site disorder model. Variance is in (kHz)²; drawn fields are in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderModel {
    pub variance_khz2: f64,
    pub distribution: DisorderDistribution,
    pub rng_seed: u64,
}

impl DisorderModel {
    pub fn gaussian(variance_khz2: f64, rng_seed: u64) -> Self {
        Self {
            variance_khz2,
            distribution: DisorderDistribution::Gaussian,
            rng_seed,
        }
    }

    pub fn none() -> Self {
        Self {
            variance_khz2: 0.0,
            distribution: DisorderDistribution::None,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        if self.variance_khz2 < 0.0 || !self.variance_khz2.is_finite() {
            return Err(LatticeError::InvalidConfig(format!(
                "disorder variance {} must be nonnegative",
                self.variance_khz2
            )));
        }
        Ok(())
    }
}

/// One realization: occupied positions, pair couplings and on-site fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinLattice {
    /// Occupied site positions in nm.
    pub positions: Vec<[f64; 3]>,
    /// Couplings (j, k, d_Hz) with j < k, within the cutoff radius.
    pub couplings: Vec<(usize, usize, f64)>,
    /// Per-spin static field offsets in Hz.
    #[serde(rename = "disorder_Hz")]
    pub disorder_hz: Vec<f64>,
    /// Generating configuration.
    pub config: LatticeConfig,
}

impl SpinLattice {
    pub fn spin_count(&self) -> usize {
        self.positions.len()
    }

    /// Coupling magnitude of each spin's strongest partner (0 for isolated
    /// spins).
    pub fn strongest_couplings(&self) -> Vec<f64> {
        let mut strongest = vec![0.0_f64; self.spin_count()];
        for &(j, k, d) in &self.couplings {
            let m = d.abs();
            if m > strongest[j] {
                strongest[j] = m;
            }
            if m > strongest[k] {
                strongest[k] = m;
            }
        }
        strongest
    }

    pub fn to_json(&self) -> Result<String, LatticeError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, LatticeError> {
        let lattice: SpinLattice = serde_json::from_str(s)?;
        lattice.config.validate()?;
        Ok(lattice)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), LatticeError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, LatticeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// FCC translations of the conventional cell, units of the lattice constant.
const FCC_OFFSETS: [[f64; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
];

/// Two-atom basis of the diamond structure.
const BASIS_OFFSETS: [[f64; 3]; 2] = [[0.0, 0.0, 0.0], [0.25, 0.25, 0.25]];

/// All candidate sites of the supercell in canonical order (cells in
/// x-major order, then FCC offset, then basis atom).
fn candidate_sites(config: &LatticeConfig) -> Vec<[f64; 3]> {
    let s = config.supercell_extent;
    let a = config.lattice_constant_nm;
    let mut sites = Vec::with_capacity(8 * s * s * s);
    for cx in 0..s {
        for cy in 0..s {
            for cz in 0..s {
                for fcc in &FCC_OFFSETS {
                    for basis in &BASIS_OFFSETS {
                        sites.push([
                            (cx as f64 + fcc[0] + basis[0]) * a,
                            (cy as f64 + fcc[1] + basis[1]) * a,
                            (cz as f64 + fcc[2] + basis[2]) * a,
                        ]);
                    }
                }
            }
        }
    }
    sites
}

/// Secular dipolar coupling in Hz between sites at `r_j` and `r_k` (nm) for
/// static field along the unit vector `b0`.
pub fn dipolar_coupling(
    r_j: [f64; 3],
    r_k: [f64; 3],
    b0: [f64; 3],
) -> Result<f64, LatticeError> {
    let dr = [r_k[0] - r_j[0], r_k[1] - r_j[1], r_k[2] - r_j[2]];
    let r_nm = norm3(dr);
    if r_nm < MIN_SITE_SEPARATION_NM {
        return Err(LatticeError::CoincidentSites { j: 0, k: 0 });
    }
    let cos_beta = (dr[0] * b0[0] + dr[1] * b0[1] + dr[2] * b0[2]) / r_nm;
    let r_m = r_nm * 1e-9;
    // (μ0/4π) ħ γ_ang² / r³ is an angular frequency; divide by 2π once for Hz.
    let gamma_ang = 2.0 * PI * GAMMA_C13_HZ_PER_T;
    let prefactor_hz = MU0 / (4.0 * PI) * HBAR * gamma_ang * gamma_ang / (2.0 * PI);
    Ok(prefactor_hz * (3.0 * cos_beta * cos_beta - 1.0) / (r_m * r_m * r_m))
}

fn pair_couplings(
    positions: &[[f64; 3]],
    config: &LatticeConfig,
) -> Result<Vec<(usize, usize, f64)>, LatticeError> {
    let cutoff = config.effective_cutoff_nm();
    let mut couplings = Vec::new();
    for j in 0..positions.len() {
        for k in (j + 1)..positions.len() {
            let dr = [
                positions[k][0] - positions[j][0],
                positions[k][1] - positions[j][1],
                positions[k][2] - positions[j][2],
            ];
            let r = norm3(dr);
            if r < MIN_SITE_SEPARATION_NM {
                return Err(LatticeError::CoincidentSites { j, k });
            }
            if r <= cutoff {
                let d = dipolar_coupling(positions[j], positions[k], config.b0_direction)?;
                couplings.push((j, k, d));
            }
        }
    }
    Ok(couplings)
}

/// Draw one lattice realization from `config`.
pub fn generate_lattice(config: &LatticeConfig) -> Result<SpinLattice, LatticeError> {
    config.validate()?;
    let sites = candidate_sites(config);
    let expected = config.abundance * sites.len() as f64;
    if expected > config.max_spins as f64 {
        return Err(LatticeError::TooManySpins {
            expected,
            max: config.max_spins,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.rng_seed);
    // One draw per site keeps the stream independent of earlier outcomes.
    let positions: Vec<[f64; 3]> = sites
        .into_iter()
        .filter(|_| rng.random::<f64>() < config.abundance)
        .collect();
    let couplings = pair_couplings(&positions, config)?;
    Ok(SpinLattice {
        disorder_hz: vec![0.0; positions.len()],
        positions,
        couplings,
        config: config.clone(),
    })
}

/// Draw realizations with reseeded occupancy until one has exactly `target`
/// spins. Attempt 0 uses `config.rng_seed` itself, attempt a > 0 the derived
/// seed `job_seed(config.rng_seed, a)`, so results stay reproducible.
pub fn generate_lattice_with_count(
    config: &LatticeConfig,
    target: usize,
    max_attempts: usize,
) -> Result<SpinLattice, LatticeError> {
    for attempt in 0..max_attempts {
        let mut c = config.clone();
        if attempt > 0 {
            c.rng_seed = job_seed(config.rng_seed, attempt as u64);
        }
        let lattice = generate_lattice(&c)?;
        if lattice.spin_count() == target {
            return Ok(lattice);
        }
    }
    Err(LatticeError::TargetCountNotReached {
        target,
        attempts: max_attempts,
    })
}

/// Median over spins of each spin's strongest coupling magnitude, in Hz.
pub fn median_coupling(lattice: &SpinLattice) -> Result<f64, LatticeError> {
    if lattice.spin_count() < 2 {
        return Err(LatticeError::EmptyLattice);
    }
    let mut strongest = lattice.strongest_couplings();
    strongest.sort_by(|a, b| a.total_cmp(b));
    let n = strongest.len();
    Ok(if n % 2 == 1 {
        strongest[n / 2]
    } else {
        0.5 * (strongest[n / 2 - 1] + strongest[n / 2])
    })
}

/// Return a copy of `lattice` with freshly drawn on-site fields.
pub fn sample_disorder(
    lattice: &SpinLattice,
    model: &DisorderModel,
) -> Result<SpinLattice, LatticeError> {
    model.validate()?;
    let n = lattice.spin_count();
    let disorder_hz = match model.distribution {
        DisorderDistribution::None => vec![0.0; n],
        DisorderDistribution::Gaussian => {
            let sigma_hz = model.variance_khz2.sqrt() * 1e3;
            let mut rng = ChaCha12Rng::seed_from_u64(model.rng_seed);
            let normal = Normal::new(0.0, sigma_hz)
                .map_err(|e| LatticeError::InvalidConfig(e.to_string()))?;
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    Ok(SpinLattice {
        positions: lattice.positions.clone(),
        couplings: lattice.couplings.clone(),
        disorder_hz,
        config: lattice.config.clone(),
    })
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

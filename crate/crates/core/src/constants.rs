//! Physical constants and fixed model parameters.
//!
//! All couplings and field strengths produced by this crate are stored in Hz
//! (cycles per second). Angular frequencies (rad/s) appear only inside
//! Hamiltonian matrix elements, where the conversion factor 2π is applied
//! exactly once.

/// Vacuum permeability μ0 in N/A² (CODATA 2018).
pub const MU0: f64 = 1.256_637_062_12e-6;

/// Reduced Planck constant ħ in J·s (CODATA 2018).
pub const HBAR: f64 = 1.054_571_817e-34;

/// ¹³C gyromagnetic ratio as γ/2π in Hz/T.
pub const GAMMA_C13_HZ_PER_T: f64 = 10.7e6;

/// Diamond conventional cubic lattice constant in nm.
pub const DIAMOND_LATTICE_CONSTANT_NM: f64 = 0.3567;

/// Largest spin count for which dense 2^N × 2^N matrices are constructed.
pub const MAX_DENSE_SPINS: usize = 12;

/// Two sites closer than this (nm) are considered coincident.
pub const MIN_SITE_SEPARATION_NM: f64 = 1e-4;

/// Default integration substeps per pulse interval for time-dependent fields.
pub const DEFAULT_AC_SUBSTEPS: usize = 64;

/// Upper bound on the pulse count of one full phase cycle when searching for
/// the smallest N with N·ϑ ≡ 0 (mod 2π).
pub const MAX_CYCLE_PULSES: usize = 10_000;

/// Largest commensurate AC-field period (in pulse intervals) for which cycle
/// unitaries are cached and reused.
pub const MAX_AC_CACHE_CYCLES: usize = 4096;

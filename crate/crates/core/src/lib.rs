//! Desk-scale numerical laboratory for pulsed spin-lock dynamics of dilute
//! dipolar-coupled spin-1/2 lattices.
//!
//! The crate covers the full chain from random lattice realizations through
//! exact dense-matrix Floquet evolution to the signal-processing and fitting
//! steps used to characterize prethermal decay:
//!
//! * [`lattice`] — diamond-structure site generation, secular dipolar
//!   couplings, on-site disorder.
//! * [`operators`] — spin-1/2 operator and Hamiltonian construction, toggling
//!   frames and average Hamiltonians.
//! * [`propagation`] — cycle unitaries, stroboscopic survival traces, free
//!   decays, AC-field evolution and flip-angle sweeps.
//! * [`acquisition`] — synthetic heterodyne windows, amplitude extraction and
//!   trace assembly.
//! * [`analysis`] — stretched/multi-exponential fits, cusp detection, regime
//!   segmentation, harmonic spectra, scaling fits.
//!
//! Conventions used throughout:
//!
//! * couplings and fields are stored in Hz; the 2π to rad/s happens once,
//!   inside Hamiltonian matrix elements;
//! * spin operators are Pauli matrices divided by two;
//! * propagators are `exp(−iHt)` and pulses `exp(−iϑ·I_axis)`;
//! * survival is `Tr[U(t) I_x U†(t) I_x] / Tr[I_x²]`, so it starts at 1.

pub mod acquisition;
pub mod analysis;
pub mod constants;
pub mod lattice;
pub mod operators;
pub mod propagation;
pub mod seed;

pub use acquisition::{
    assemble_trace, extract_amplitude, moving_average, pipeline_round_trip, read_window_batch,
    synthesize_window, write_window_batch, AcquisitionConfig, AcquisitionError, DecayTrace,
    FilterState, PhaseModel, RawWindow, WindowBatchSidecar,
};
pub use analysis::{
    decay_rate_scaling, detect_cusp, fit_multi_exponential, fit_stretched_exponential,
    harmonic_slope_fit, harmonic_spectrum, one_over_e_lifetime, segment_regimes, throughput_gain,
    AnalysisError, CuspFit, ExpTerm, FitReport, HarmonicSlopes, HarmonicSpectrum, MultiExpFit,
    Regime, RegimeSegmentation, ScalingAxes, ScalingFit, SegmentationOptions, StretchedFit,
};

pub use lattice::{
    dipolar_coupling, generate_lattice, generate_lattice_with_count, median_coupling,
    sample_disorder, DisorderDistribution, DisorderModel, LatticeConfig, LatticeError,
    SpinLattice,
};
pub use operators::{
    average_hamiltonian, build_dipolar_hamiltonian, build_onsite_hamiltonian,
    collective_operator, collective_rotation, flip_flop_hamiltonian, magnus_parameter,
    toggled_hamiltonian, AverageHamiltonian, Axis, HamiltonianSet, OperatorError,
    OperatorUnits, SpinOperator,
};
pub use propagation::{
    average_traces, cycle_unitary, evolve_survival, evolve_survival_sampled,
    evolve_survival_with_bloch, evolve_with_ac_field, evolve_with_ac_field_substeps, fid,
    flip_angle_sweep, AcFieldSpec, CyclePropagator, EvolutionTrace, FlipAnglePoint, PropagationError,
    PulseModel, PulseSequenceSpec, TraceMetadata,
};

//! Evolution of the transverse-polarized state under the pulsed spin-lock
//! drive and under free precession.
//!
//! The cycle unitary is diagonalized once and powered through its eigenphases,
//! so a survival trace over n pulses costs O(n 4^N) after an O(8^N) setup and
//! individual pulse counts can be sampled at arbitrary (e.g. logarithmic)
//! spacing. All propagators use the exp(-iHt) sign convention; survival traces
//! are invariant under complex conjugation of the evolution, so the opposite
//! convention would produce identical observables.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Eigh, Inverse, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{DEFAULT_AC_SUBSTEPS, MAX_AC_CACHE_CYCLES};
use crate::operators::{
    collective_operator, collective_rotation, Axis, HamiltonianSet, OperatorError,
};

/// Unitarity and eigenphase-modulus tolerance for cycle propagators.
const UNITARITY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),
    #[error("finite pulse model requires a nonzero pulse width")]
    DegeneratePulse,
    #[error("sequence carries no AC field specification")]
    MissingAcField,
    #[error("{got} substeps per pulse interval is below the minimum of {min}")]
    SubstepTooCoarse { got: usize, min: usize },
    #[error("cycle unitary lost unitarity: residual {residual:.3e}")]
    UnitarityLoss { residual: f64 },
    #[error("invalid time grid: {0}")]
    InvalidTimes(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("traces cannot be combined: {0}")]
    TraceMismatch(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("linear algebra backend failed: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed trace file: {0}")]
    Format(String),
}

/// How the flip pulses enter the cycle unitary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseModel {
    /// Instantaneous rotation; the pulse width is required to be zero.
    Delta,
    /// Rabi drive of width t_p at rate chosen so the pulse area equals the
    /// flip angle.
    Finite,
}

/// Transverse AC field b cos(2π f_ac t + φ) applied along z between pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcFieldSpec {
    pub amplitude_hz: f64,
    pub frequency_hz: f64,
    pub phase_rad: f64,
}

/// Pulse-train specification: a train of identical flip-angle pulses about x,
/// one per spacing τ, with an acquisition window between pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequenceSpec {
    pub flip_angle_rad: f64,
    pub spacing_s: f64,
    pub pulse_width_s: f64,
    pub acquisition_window_s: f64,
    pub pulse_count: usize,
    pub pulse_model: PulseModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ac_field: Option<AcFieldSpec>,
}

impl PulseSequenceSpec {
    /// Delta-pulse train with the acquisition window filling the spacing.
    pub fn delta(flip_angle_rad: f64, spacing_s: f64, pulse_count: usize) -> Self {
        Self {
            flip_angle_rad,
            spacing_s,
            pulse_width_s: 0.0,
            acquisition_window_s: spacing_s,
            pulse_count,
            pulse_model: PulseModel::Delta,
            ac_field: None,
        }
    }

    pub fn with_ac_field(mut self, amplitude_hz: f64, frequency_hz: f64, phase_rad: f64) -> Self {
        self.ac_field = Some(AcFieldSpec {
            amplitude_hz,
            frequency_hz,
            phase_rad,
        });
        self
    }

    /// Drive angular rate ω = 2π/τ in rad/s.
    pub fn angular_rate(&self) -> f64 {
        TAU / self.spacing_s
    }

    /// Per-pulse sampling rate 1/τ in Hz.
    pub fn sampling_rate_hz(&self) -> f64 {
        1.0 / self.spacing_s
    }

    /// AC frequency ϑ/(2πτ) that is periodicity-matched to the drive.
    pub fn resonant_ac_frequency_hz(&self) -> f64 {
        self.flip_angle_rad / (TAU * self.spacing_s)
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |msg: String| Err(PropagationError::InvalidSequence(msg));
        if !self.flip_angle_rad.is_finite() {
            return bad(format!("flip angle {} is not finite", self.flip_angle_rad));
        }
        if !(self.spacing_s > 0.0 && self.spacing_s.is_finite()) {
            return bad(format!("pulse spacing {} s must be positive", self.spacing_s));
        }
        if !(self.pulse_width_s >= 0.0 && self.pulse_width_s < self.spacing_s) {
            return bad(format!(
                "pulse width {} s must lie in [0, spacing)",
                self.pulse_width_s
            ));
        }
        if self.pulse_model == PulseModel::Delta && self.pulse_width_s != 0.0 {
            return bad("delta pulses must have zero width".into());
        }
        if self.pulse_model == PulseModel::Finite && self.pulse_width_s == 0.0 {
            return Err(PropagationError::DegeneratePulse);
        }
        if !(self.acquisition_window_s >= 0.0
            && self.acquisition_window_s <= self.spacing_s - self.pulse_width_s)
        {
            return bad(format!(
                "acquisition window {} s must fit between pulses",
                self.acquisition_window_s
            ));
        }
        if self.pulse_count == 0 {
            return bad("pulse count must be at least 1".into());
        }
        if let Some(ac) = &self.ac_field {
            if !(ac.amplitude_hz >= 0.0 && ac.amplitude_hz.is_finite()) {
                return bad(format!("AC amplitude {} Hz must be nonnegative", ac.amplitude_hz));
            }
            if !(ac.frequency_hz > 0.0 && ac.frequency_hz.is_finite()) {
                return bad(format!("AC frequency {} Hz must be positive", ac.frequency_hz));
            }
            if !ac.phase_rad.is_finite() {
                return bad(format!("AC phase {} is not finite", ac.phase_rad));
            }
        }
        Ok(())
    }
}

/// Provenance attached to a trace, serialized into the CSV header line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub n_spins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<PulseSequenceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl TraceMetadata {
    pub fn bare(n_spins: usize) -> Self {
        Self {
            n_spins,
            sequence: None,
            lattice_seed: None,
            disorder_seed: None,
            label: None,
        }
    }
}

/// Survival-probability trace s(t_j), optionally with Bloch components of the
/// normalized transverse polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub bloch: Option<[Vec<f64>; 3]>,
    pub metadata: TraceMetadata,
}

impl EvolutionTrace {
    pub fn new(
        times: Vec<f64>,
        survival: Vec<f64>,
        bloch: Option<[Vec<f64>; 3]>,
        metadata: TraceMetadata,
    ) -> Result<Self, PropagationError> {
        let trace = Self {
            times,
            survival,
            bloch,
            metadata,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |msg: String| Err(PropagationError::InvalidTrace(msg));
        if self.times.is_empty() {
            return bad("trace is empty".into());
        }
        if self.times.len() != self.survival.len() {
            return bad(format!(
                "{} times vs {} survival points",
                self.times.len(),
                self.survival.len()
            ));
        }
        if self.times.iter().any(|t| !t.is_finite())
            || self.times.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("times must be finite and strictly increasing".into());
        }
        if self.survival.iter().any(|s| !s.is_finite() || s.abs() > 1.0 + 1e-9) {
            return bad("survival values must be finite with |s| <= 1".into());
        }
        if self.times[0] == 0.0 && (self.survival[0] - 1.0).abs() > 1e-9 {
            return bad(format!("s(0) = {} differs from 1", self.survival[0]));
        }
        if let Some(bloch) = &self.bloch {
            if bloch.iter().any(|c| c.len() != self.times.len()) {
                return bad("Bloch component length mismatch".into());
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with a leading "#"-prefixed JSON metadata line. Floats use the
    /// shortest decimal that round-trips, so files are bit-stable.
    pub fn to_csv_string(&self) -> String {
        let meta = serde_json::to_string(&self.metadata).expect("metadata serializes");
        let mut out = String::new();
        writeln!(out, "# {meta}").unwrap();
        match &self.bloch {
            None => {
                writeln!(out, "time_s,survival").unwrap();
                for (t, s) in self.times.iter().zip(&self.survival) {
                    writeln!(out, "{t},{s}").unwrap();
                }
            }
            Some([ix, iy, iz]) => {
                writeln!(out, "time_s,survival,ix,iy,iz").unwrap();
                for (j, (t, s)) in self.times.iter().zip(&self.survival).enumerate() {
                    writeln!(out, "{t},{s},{},{},{}", ix[j], iy[j], iz[j]).unwrap();
                }
            }
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self, PropagationError> {
        let mut lines = text.lines();
        let meta_line = lines
            .next()
            .ok_or_else(|| PropagationError::Format("empty file".into()))?;
        let meta_json = meta_line
            .strip_prefix('#')
            .ok_or_else(|| PropagationError::Format("missing # metadata line".into()))?;
        let metadata: TraceMetadata = serde_json::from_str(meta_json.trim())
            .map_err(|e| PropagationError::Format(format!("metadata: {e}")))?;
        let header = lines
            .next()
            .ok_or_else(|| PropagationError::Format("missing header".into()))?;
        let with_bloch = match header {
            "time_s,survival" => false,
            "time_s,survival,ix,iy,iz" => true,
            other => {
                return Err(PropagationError::Format(format!("unknown header {other:?}")));
            }
        };
        let mut times = Vec::new();
        let mut survival = Vec::new();
        let mut bloch: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (row, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let expected = if with_bloch { 5 } else { 2 };
            if fields.len() != expected {
                return Err(PropagationError::Format(format!(
                    "row {}: {} fields, expected {expected}",
                    row + 3,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| PropagationError::Format(format!("row {}: {e}", row + 3)))
            };
            times.push(parse(fields[0])?);
            survival.push(parse(fields[1])?);
            if with_bloch {
                for (c, f) in bloch.iter_mut().zip(&fields[2..]) {
                    c.push(parse(f)?);
                }
            }
        }
        Self::new(times, survival, with_bloch.then_some(bloch), metadata)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), PropagationError> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, PropagationError> {
        Self::from_csv_str(&fs::read_to_string(path)?)
    }
}

/// Pointwise mean of traces sharing one time grid. Bloch components are
/// averaged only when every input carries them.
pub fn average_traces(traces: &[EvolutionTrace]) -> Result<EvolutionTrace, PropagationError> {
    let first = traces
        .first()
        .ok_or_else(|| PropagationError::TraceMismatch("no traces given".into()))?;
    for (k, t) in traces.iter().enumerate().skip(1) {
        if t.times != first.times {
            return Err(PropagationError::TraceMismatch(format!(
                "trace {k} has a different time grid"
            )));
        }
    }
    let m = traces.len() as f64;
    let len = first.len();
    let mut survival = vec![0.0; len];
    for t in traces {
        for (acc, s) in survival.iter_mut().zip(&t.survival) {
            *acc += s / m;
        }
    }
    let bloch = if traces.iter().all(|t| t.bloch.is_some()) {
        let mut mean: [Vec<f64>; 3] = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        for t in traces {
            let comps = t.bloch.as_ref().unwrap();
            for (dst, src) in mean.iter_mut().zip(comps) {
                for (acc, v) in dst.iter_mut().zip(src) {
                    *acc += v / m;
                }
            }
        }
        Some(mean)
    } else {
        None
    };
    let mut metadata = first.metadata.clone();
    metadata.lattice_seed = None;
    metadata.disorder_seed = None;
    Ok(EvolutionTrace {
        times: first.times.clone(),
        survival,
        bloch,
        metadata,
    })
}

/// exp(-iHt) for Hermitian H (rad/s) via eigendecomposition.
fn expm_hermitian(h: &Array2<C64>, t: f64) -> Result<Array2<C64>, PropagationError> {
    let (energies, basis) = h.eigh(UPLO::Lower)?;
    let mut scaled = basis.clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let phase = C64::from_polar(1.0, -energies[j] * t);
        col.mapv_inplace(|z| z * phase);
    }
    Ok(scaled.dot(&basis.t().mapv(|z| z.conj())))
}

/// One drive cycle diagonalized for repeated application: U = V e^{iφ} V⁻¹,
/// so U^n costs O(4^N) per sample instead of a matrix product per pulse.
#[derive(Debug, Clone)]
pub struct CyclePropagator {
    spec: PulseSequenceSpec,
    n_spins: usize,
    unitary: Array2<C64>,
    eigenphases: Array1<f64>,
    eigenvectors: Array2<C64>,
    eigenvectors_inv: Array2<C64>,
}

/// U = R_x(ϑ)·exp(-iHτ) for delta pulses; for finite pulses the rotation is
/// replaced by exp(-i(H + (ϑ/t_p) I_x)t_p) over the pulse width.
pub fn cycle_unitary(
    h: &HamiltonianSet,
    seq: &PulseSequenceSpec,
) -> Result<CyclePropagator, PropagationError> {
    seq.validate()?;
    let n_spins = h.n_spins();
    let total = h.total();
    let unitary = match seq.pulse_model {
        PulseModel::Delta => {
            let rot = collective_rotation(seq.flip_angle_rad, Axis::X, n_spins)?;
            rot.matrix.dot(&expm_hermitian(&total.matrix, seq.spacing_s)?)
        }
        PulseModel::Finite => {
            let ix = collective_operator(Axis::X, n_spins)?;
            // Rabi rate in rad/s carrying the full flip angle over the width.
            let rabi = seq.flip_angle_rad / seq.pulse_width_s;
            let pulse_h = &total.matrix + &ix.matrix.mapv(|z| z * C64::new(rabi, 0.0));
            let pulse = expm_hermitian(&pulse_h, seq.pulse_width_s)?;
            let free = expm_hermitian(&total.matrix, seq.spacing_s - seq.pulse_width_s)?;
            pulse.dot(&free)
        }
    };
    CyclePropagator::from_unitary(unitary, seq.clone(), n_spins)
}

impl CyclePropagator {
    fn from_unitary(
        unitary: Array2<C64>,
        spec: PulseSequenceSpec,
        n_spins: usize,
    ) -> Result<Self, PropagationError> {
        let dim = unitary.nrows();
        let gram = unitary.t().mapv(|z| z.conj()).dot(&unitary);
        let eye = Array2::<C64>::eye(dim);
        let residual = (&gram - &eye).mapv(|z| z.norm_sqr()).sum().sqrt();
        if residual > UNITARITY_TOL {
            return Err(PropagationError::UnitarityLoss { residual });
        }
        let (eigenvalues, eigenvectors) = unitary.eig()?;
        let off_circle = eigenvalues
            .iter()
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max);
        if off_circle > UNITARITY_TOL {
            return Err(PropagationError::UnitarityLoss {
                residual: off_circle,
            });
        }
        let eigenphases = eigenvalues.mapv(|z| z.arg());
        let eigenvectors_inv = eigenvectors.inv()?;
        Ok(Self {
            spec,
            n_spins,
            unitary,
            eigenphases,
            eigenvectors,
            eigenvectors_inv,
        })
    }

    pub fn spec(&self) -> &PulseSequenceSpec {
        &self.spec
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.unitary.nrows()
    }

    pub fn unitary(&self) -> &Array2<C64> {
        &self.unitary
    }

    pub fn eigenphases(&self) -> &Array1<f64> {
        &self.eigenphases
    }

    /// U^n reconstructed from the eigendecomposition; exactly norm-preserving
    /// in the eigenphases for any pulse count.
    pub fn power(&self, pulses: u64) -> Array2<C64> {
        let mut scaled = self.eigenvectors.clone();
        for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
            let phase = C64::from_polar(1.0, pulses as f64 * self.eigenphases[j]);
            col.mapv_inplace(|z| z * phase);
        }
        scaled.dot(&self.eigenvectors_inv)
    }

    /// Spectral weights C_jk = (V⁻¹ L V)_jk (V⁻¹ R V)_kj and their sum; the
    /// two-sided trace Tr(U^n L U^-n R) is then Σ C_jk e^{in(φ_j-φ_k)}.
    fn observable_weights(&self, left: &Array2<C64>, right: &Array2<C64>) -> (Array2<C64>, f64) {
        let a = self.eigenvectors_inv.dot(left).dot(&self.eigenvectors);
        let b = self.eigenvectors_inv.dot(right).dot(&self.eigenvectors);
        let weights = &a * &b.t();
        let norm = weights.sum().re;
        (weights, norm)
    }

    fn sample_series(weights: &Array2<C64>, phases: &Array1<f64>, pulses: &[u64]) -> Vec<f64> {
        let dim = phases.len();
        let mut phase_vec = Array1::<C64>::zeros(dim);
        pulses
            .iter()
            .map(|&n| {
                let nf = n as f64;
                for (v, phi) in phase_vec.iter_mut().zip(phases) {
                    *v = C64::from_polar(1.0, nf * phi);
                }
                let folded = weights.dot(&phase_vec.mapv(|z| z.conj()));
                phase_vec.dot(&folded).re
            })
            .collect()
    }

    /// s(n) = Tr(U^n I_x U^-n I_x)/Tr(I_x²) at each requested pulse count.
    pub fn survival_at(&self, pulses: &[u64]) -> Vec<f64> {
        let ix = collective_operator(Axis::X, self.n_spins)
            .expect("propagator dimension validated")
            .matrix;
        let (weights, norm) = self.observable_weights(&ix, &ix);
        Self::sample_series(&weights, &self.eigenphases, pulses)
            .into_iter()
            .map(|v| v / norm)
            .collect()
    }

    /// Normalized ⟨I_x⟩, ⟨I_y⟩, ⟨I_z⟩ of the evolved I_x state.
    pub fn bloch_at(&self, pulses: &[u64]) -> [Vec<f64>; 3] {
        let ix = collective_operator(Axis::X, self.n_spins)
            .expect("propagator dimension validated")
            .matrix;
        let norm = ix.iter().map(|z| z.norm_sqr()).sum::<f64>();
        [Axis::X, Axis::Y, Axis::Z].map(|axis| {
            let obs = collective_operator(axis, self.n_spins)
                .expect("propagator dimension validated")
                .matrix;
            let (weights, _) = self.observable_weights(&ix, &obs);
            Self::sample_series(&weights, &self.eigenphases, pulses)
                .into_iter()
                .map(|v| v / norm)
                .collect()
        })
    }
}

/// Survival trace at every pulse count 0..=pulses on the grid t_j = jτ.
pub fn evolve_survival(prop: &CyclePropagator, pulses: usize) -> EvolutionTrace {
    let ns: Vec<u64> = (0..=pulses as u64).collect();
    evolve_survival_sampled(prop, &ns)
}

/// Survival trace at selected pulse counts; the first entry must be the
/// smallest. Useful for logarithmically spaced long-horizon sampling.
pub fn evolve_survival_sampled(prop: &CyclePropagator, pulses: &[u64]) -> EvolutionTrace {
    let tau = prop.spec().spacing_s;
    let survival = prop.survival_at(pulses);
    let mut metadata = TraceMetadata::bare(prop.n_spins());
    metadata.sequence = Some(prop.spec().clone());
    EvolutionTrace {
        times: pulses.iter().map(|&n| n as f64 * tau).collect(),
        survival,
        bloch: None,
        metadata,
    }
}

/// As evolve_survival, with Bloch components attached.
pub fn evolve_survival_with_bloch(prop: &CyclePropagator, pulses: usize) -> EvolutionTrace {
    let ns: Vec<u64> = (0..=pulses as u64).collect();
    let mut trace = evolve_survival_sampled(prop, &ns);
    trace.bloch = Some(prop.bloch_at(&ns));
    trace
}

/// Free-induction decay s(t) = Tr(e^{-iHt} I_x e^{iHt} I_x)/Tr(I_x²) with no
/// pulses, evaluated on an arbitrary sorted time grid.
pub fn fid(h: &HamiltonianSet, times: &[f64]) -> Result<EvolutionTrace, PropagationError> {
    if times.is_empty() {
        return Err(PropagationError::InvalidTimes("no times given".into()));
    }
    if times[0] < 0.0 || times.iter().any(|t| !t.is_finite()) {
        return Err(PropagationError::InvalidTimes(
            "times must be finite and nonnegative".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PropagationError::InvalidTimes(
            "times must be strictly increasing".into(),
        ));
    }
    let n_spins = h.n_spins();
    let total = h.total();
    let (energies, basis) = total.matrix.eigh(UPLO::Lower)?;
    let ix = collective_operator(Axis::X, n_spins)?.matrix;
    // In the energy eigenbasis the overlap matrix is Hermitian, so the
    // weights |A_jk|² are real and the trace reduces to a cosine sum.
    let a = basis.t().mapv(|z| z.conj()).dot(&ix).dot(&basis);
    let weights = a.mapv(|z| z.norm_sqr());
    let norm: f64 = weights.sum();
    let dim = energies.len();
    let survival: Vec<f64> = times
        .iter()
        .map(|&t| {
            let mut acc = 0.0;
            for j in 0..dim {
                for k in 0..dim {
                    acc += weights[[j, k]] * ((energies[j] - energies[k]) * t).cos();
                }
            }
            acc / norm
        })
        .collect();
    Ok(EvolutionTrace {
        times: times.to_vec(),
        survival,
        bloch: None,
        metadata: TraceMetadata::bare(n_spins),
    })
}

/// Smallest cycle count K ≤ the cache cap with K·f_ac·τ an integer, if any;
/// the AC Hamiltonian repeats after K pulse intervals.
fn commensurate_period(frequency_hz: f64, spacing_s: f64) -> Option<usize> {
    let per_interval = frequency_hz * spacing_s;
    (1..=MAX_AC_CACHE_CYCLES).find(|&k| {
        let cycles = k as f64 * per_interval;
        (cycles - cycles.round()).abs() < 1e-9
    })
}

/// Pulsed evolution with the AC field added to the free-evolution Hamiltonian
/// as a midpoint piecewise-constant term, delta pulses unchanged. Uses the
/// default substep count of 64 per pulse interval.
pub fn evolve_with_ac_field(
    h: &HamiltonianSet,
    seq: &PulseSequenceSpec,
) -> Result<EvolutionTrace, PropagationError> {
    evolve_with_ac_field_substeps(h, seq, DEFAULT_AC_SUBSTEPS)
}

/// As evolve_with_ac_field with an explicit substep count (for convergence
/// studies); substeps below the default are rejected as too coarse.
pub fn evolve_with_ac_field_substeps(
    h: &HamiltonianSet,
    seq: &PulseSequenceSpec,
    substeps: usize,
) -> Result<EvolutionTrace, PropagationError> {
    seq.validate()?;
    let ac = seq.ac_field.ok_or(PropagationError::MissingAcField)?;
    if substeps < DEFAULT_AC_SUBSTEPS {
        return Err(PropagationError::SubstepTooCoarse {
            got: substeps,
            min: DEFAULT_AC_SUBSTEPS,
        });
    }
    if seq.pulse_model != PulseModel::Delta {
        return Err(PropagationError::InvalidSequence(
            "AC interval integration supports delta pulses only".into(),
        ));
    }
    let n_spins = h.n_spins();
    let total = h.total();
    let rot = collective_rotation(seq.flip_angle_rad, Axis::X, n_spins)?.matrix;
    let iz = collective_operator(Axis::Z, n_spins)?.matrix;
    let ix = collective_operator(Axis::X, n_spins)?.matrix;
    let tau = seq.spacing_s;
    let dt = tau / substeps as f64;

    // The cycle unitaries repeat with the field's commensurate period; build
    // each distinct one once.
    let distinct = commensurate_period(ac.frequency_hz, tau)
        .unwrap_or(seq.pulse_count)
        .min(seq.pulse_count);
    let mut cycles: Vec<(Array2<C64>, Array2<C64>)> = Vec::with_capacity(distinct);
    for m in 0..distinct {
        let mut interval = Array2::<C64>::eye(1 << n_spins);
        for s in 0..substeps {
            let t_mid = m as f64 * tau + (s as f64 + 0.5) * dt;
            let field = TAU * ac.amplitude_hz * (TAU * ac.frequency_hz * t_mid + ac.phase_rad).cos();
            let h_sub = &total.matrix + &iz.mapv(|z| z * C64::new(field, 0.0));
            interval = expm_hermitian(&h_sub, dt)?.dot(&interval);
        }
        let unitary = rot.dot(&interval);
        let adjoint = unitary.t().mapv(|z| z.conj());
        cycles.push((unitary, adjoint));
    }

    let norm = ix.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let mut state = ix.clone();
    let mut survival = Vec::with_capacity(seq.pulse_count + 1);
    survival.push(1.0);
    for m in 0..seq.pulse_count {
        let (unitary, adjoint) = &cycles[m % distinct];
        state = unitary.dot(&state).dot(adjoint);
        let overlap: C64 = state.iter().zip(ix.iter()).map(|(a, b)| a * b.conj()).sum();
        survival.push(overlap.re / norm);
    }
    let mut metadata = TraceMetadata::bare(n_spins);
    metadata.sequence = Some(seq.clone());
    Ok(EvolutionTrace {
        times: (0..=seq.pulse_count).map(|n| n as f64 * tau).collect(),
        survival,
        bloch: None,
        metadata,
    })
}

/// One point of the flip-angle sweep: survival summed over the pulse train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipAnglePoint {
    pub flip_angle_rad: f64,
    pub integrated_survival: f64,
}

/// Integrated survival Σ_n s(nτ) over the template's pulse count, evaluated
/// at each flip angle in the grid.
pub fn flip_angle_sweep(
    h: &HamiltonianSet,
    template: &PulseSequenceSpec,
    flip_angles: &[f64],
) -> Result<Vec<FlipAnglePoint>, PropagationError> {
    if flip_angles.is_empty() {
        return Err(PropagationError::InvalidSequence(
            "flip angle grid is empty".into(),
        ));
    }
    flip_angles
        .iter()
        .map(|&theta| {
            let mut spec = template.clone();
            spec.flip_angle_rad = theta;
            let prop = cycle_unitary(h, &spec)?;
            let trace = evolve_survival(&prop, spec.pulse_count);
            Ok(FlipAnglePoint {
                flip_angle_rad: theta,
                integrated_survival: trace.survival.iter().sum(),
            })
        })
        .collect()
}

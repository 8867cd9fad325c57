//! Synthetic signal-acquisition chain: heterodyned raw windows generated from
//! a survival trace, per-window amplitude extraction at the carrier bin, and
//! assembly into a filtered decay trace.
//!
//! The chain mirrors a heterodyne NMR receiver at desk scale. Each pulse
//! interval contributes one acquisition window of the carrier scaled by the
//! instantaneous survival amplitude; the amplitude is recovered as the
//! magnitude of the DFT bin nearest the carrier, normalized so an on-bin tone
//! of amplitude A returns A. Windows are processed one at a time, so memory
//! stays proportional to a single window regardless of trace length.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::EvolutionTrace;
use crate::seed::job_seed;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("invalid acquisition config: {0}")]
    InvalidConfig(String),
    #[error("window of {len} samples is too short to transform")]
    WindowTooShort { len: usize },
    #[error("filter window {window_s} s is smaller than the trace step {step_s} s")]
    WindowSmallerThanStep { window_s: f64, step_s: f64 },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed window batch: {0}")]
    Format(String),
}

/// Carrier phase convention across windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseModel {
    /// Phase-continuous carrier: window n starts at 2π f_het t_n (mod 2π).
    Coherent,
    /// Independent uniform phase per window; magnitudes are unaffected.
    Random,
}

/// Receiver and synthesis parameters for the acquisition chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub heterodyne_frequency_hz: f64,
    pub sample_interval_s: f64,
    pub window_length_s: f64,
    pub noise_sigma: f64,
    pub polarization_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_envelope_s: Option<f64>,
    pub phase_model: PhaseModel,
    pub rng_seed: u64,
}

impl AcquisitionConfig {
    /// 20 MHz carrier sampled at 1 GS/s over 2 μs windows, noise off.
    pub fn new(rng_seed: u64) -> Self {
        Self {
            heterodyne_frequency_hz: 20e6,
            sample_interval_s: 1e-9,
            window_length_s: 2e-6,
            noise_sigma: 0.0,
            polarization_scale: 1.0,
            t1_envelope_s: None,
            phase_model: PhaseModel::Coherent,
            rng_seed,
        }
    }

    /// Samples per window, ⌊t_acq/Δt⌋. The guard keeps division roundoff
    /// from dropping the last sample of an exact ratio.
    pub fn samples_per_window(&self) -> usize {
        (self.window_length_s / self.sample_interval_s + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), AcquisitionError> {
        let bad = |msg: String| Err(AcquisitionError::InvalidConfig(msg));
        if !(self.sample_interval_s > 0.0 && self.sample_interval_s.is_finite()) {
            return bad(format!(
                "sample interval {} s must be positive",
                self.sample_interval_s
            ));
        }
        if !(self.heterodyne_frequency_hz > 0.0 && self.heterodyne_frequency_hz.is_finite()) {
            return bad(format!(
                "heterodyne frequency {} Hz must be positive",
                self.heterodyne_frequency_hz
            ));
        }
        // The carrier must resolve at least ten periods per window and stay
        // below Nyquist, or the extraction bin degenerates.
        if self.window_length_s < 10.0 / self.heterodyne_frequency_hz {
            return bad(format!(
                "window length {} s is under ten carrier periods",
                self.window_length_s
            ));
        }
        if self.heterodyne_frequency_hz >= 0.5 / self.sample_interval_s {
            return bad(format!(
                "heterodyne frequency {} Hz is at or above Nyquist",
                self.heterodyne_frequency_hz
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be nonnegative", self.noise_sigma));
        }
        if !(self.polarization_scale > 0.0 && self.polarization_scale.is_finite()) {
            return bad(format!(
                "polarization scale {} must be positive",
                self.polarization_scale
            ));
        }
        if let Some(t1) = self.t1_envelope_s {
            if !(t1 > 0.0 && t1.is_finite()) {
                return bad(format!("T1 envelope {t1} s must be positive"));
            }
        }
        Ok(())
    }
}

/// One acquisition window of real heterodyne samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub samples: Vec<f64>,
    pub start_time_s: f64,
}

impl RawWindow {
    pub fn validate(&self) -> Result<(), AcquisitionError> {
        if self.samples.len() < 2 {
            return Err(AcquisitionError::WindowTooShort {
                len: self.samples.len(),
            });
        }
        if self.samples.iter().any(|s| !s.is_finite()) || !self.start_time_s.is_finite() {
            return Err(AcquisitionError::InvalidTrace(
                "window contains non-finite values".into(),
            ));
        }
        Ok(())
    }
}

/// Assembled per-window amplitudes, one point per pulse interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub times: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub filter_state: FilterState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterState {
    None,
    MovingAverage { window_s: f64 },
}

impl DecayTrace {
    pub fn new(times: Vec<f64>, amplitudes: Vec<f64>) -> Result<Self, AcquisitionError> {
        let trace = Self {
            times,
            amplitudes,
            filter_state: FilterState::None,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), AcquisitionError> {
        let bad = |msg: String| Err(AcquisitionError::InvalidTrace(msg));
        if self.times.is_empty() {
            return bad("trace is empty".into());
        }
        if self.times.len() != self.amplitudes.len() {
            return bad(format!(
                "{} times vs {} amplitudes",
                self.times.len(),
                self.amplitudes.len()
            ));
        }
        if self.times.iter().any(|t| !t.is_finite())
            || self.times.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("times must be finite and strictly increasing".into());
        }
        if self.amplitudes.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return bad("amplitudes must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Magnitude view of a simulator trace, so fits accept either source.
    pub fn from_survival_magnitudes(trace: &EvolutionTrace) -> Self {
        Self {
            times: trace.times.clone(),
            amplitudes: trace.survival.iter().map(|s| s.abs()).collect(),
            filter_state: FilterState::None,
        }
    }

    /// CSV with a "#"-prefixed JSON state line, shortest round-trip floats.
    pub fn to_csv_string(&self) -> String {
        use std::fmt::Write as _;
        let state = serde_json::to_string(&self.filter_state).expect("state serializes");
        let mut out = String::new();
        writeln!(out, "# {{\"filter_state\":{state}}}").unwrap();
        writeln!(out, "time_s,amplitude").unwrap();
        for (t, a) in self.times.iter().zip(&self.amplitudes) {
            writeln!(out, "{t},{a}").unwrap();
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self, AcquisitionError> {
        #[derive(Deserialize)]
        struct Meta {
            filter_state: FilterState,
        }
        let mut lines = text.lines();
        let meta_line = lines
            .next()
            .ok_or_else(|| AcquisitionError::Format("empty file".into()))?;
        let meta_json = meta_line
            .strip_prefix('#')
            .ok_or_else(|| AcquisitionError::Format("missing # state line".into()))?;
        let meta: Meta = serde_json::from_str(meta_json.trim())
            .map_err(|e| AcquisitionError::Format(format!("state line: {e}")))?;
        match lines.next() {
            Some("time_s,amplitude") => {}
            other => {
                return Err(AcquisitionError::Format(format!("unknown header {other:?}")));
            }
        }
        let mut times = Vec::new();
        let mut amplitudes = Vec::new();
        for (row, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (t, a) = line.split_once(',').ok_or_else(|| {
                AcquisitionError::Format(format!("row {}: missing comma", row + 3))
            })?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| AcquisitionError::Format(format!("row {}: {e}", row + 3)))
            };
            times.push(parse(t)?);
            amplitudes.push(parse(a)?);
        }
        let mut trace = Self::new(times, amplitudes)?;
        trace.filter_state = meta.filter_state;
        Ok(trace)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), AcquisitionError> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, AcquisitionError> {
        Self::from_csv_str(&fs::read_to_string(path)?)
    }
}

/// Per-window RNG stream: mixing the start time into the master seed keeps
/// windows independent yet exactly reproducible.
fn window_rng(config: &AcquisitionConfig, start_time_s: f64) -> StdRng {
    StdRng::seed_from_u64(job_seed(config.rng_seed, start_time_s.to_bits()))
}

/// Carrier window with amplitude set by the survival value:
/// samples[i] = ε·A·env(t0)·cos(2π f_het iΔt + φ) + N(0, σ).
pub fn synthesize_window(
    amplitude: f64,
    phase: f64,
    start_time_s: f64,
    config: &AcquisitionConfig,
) -> Result<RawWindow, AcquisitionError> {
    config.validate()?;
    let count = config.samples_per_window();
    let envelope = match config.t1_envelope_s {
        Some(t1) => (-start_time_s / t1).exp(),
        None => 1.0,
    };
    let scale = config.polarization_scale * amplitude * envelope;
    let mut samples: Vec<f64> = (0..count)
        .map(|i| {
            let t = i as f64 * config.sample_interval_s;
            scale * (TAU * config.heterodyne_frequency_hz * t + phase).cos()
        })
        .collect();
    if config.noise_sigma > 0.0 {
        let mut rng = window_rng(config, start_time_s);
        let normal = Normal::new(0.0, config.noise_sigma)
            .map_err(|e| AcquisitionError::InvalidConfig(e.to_string()))?;
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }
    let window = RawWindow {
        samples,
        start_time_s,
    };
    window.validate()?;
    Ok(window)
}

/// Amplitude of the DFT bin nearest the carrier, normalized as 2/L·|X_k| so
/// an on-bin tone of amplitude A returns A.
pub fn extract_amplitude(
    window: &RawWindow,
    config: &AcquisitionConfig,
) -> Result<f64, AcquisitionError> {
    window.validate()?;
    let len = window.samples.len();
    let bin = (config.heterodyne_frequency_hz * config.sample_interval_s * len as f64).round();
    let omega = TAU * bin / len as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, s) in window.samples.iter().enumerate() {
        let angle = omega * i as f64;
        re += s * angle.cos();
        im -= s * angle.sin();
    }
    Ok(2.0 / len as f64 * (re * re + im * im).sqrt())
}

/// Package per-window amplitudes on the uniform grid t_n = nτ.
pub fn assemble_trace(amplitudes: &[f64], tau_s: f64) -> Result<DecayTrace, AcquisitionError> {
    if amplitudes.is_empty() {
        return Err(AcquisitionError::InvalidTrace("no amplitudes given".into()));
    }
    if !(tau_s > 0.0 && tau_s.is_finite()) {
        return Err(AcquisitionError::InvalidTrace(format!(
            "spacing {tau_s} s must be positive"
        )));
    }
    DecayTrace::new(
        (0..amplitudes.len()).map(|n| n as f64 * tau_s).collect(),
        amplitudes.to_vec(),
    )
}

/// Centered moving mean over ⌊window/τ⌋ points. Near the edges the window is
/// clipped to the available points (shrinking window), so the first and last
/// points average over fewer samples.
pub fn moving_average(trace: &DecayTrace, window_s: f64) -> Result<DecayTrace, AcquisitionError> {
    trace.validate()?;
    if trace.len() < 2 {
        return Err(AcquisitionError::InvalidTrace(
            "moving average needs at least two points".into(),
        ));
    }
    let step_s = trace.times[1] - trace.times[0];
    if window_s < step_s {
        return Err(AcquisitionError::WindowSmallerThanStep { window_s, step_s });
    }
    let count = (window_s / step_s).floor() as usize;
    let n = trace.len();
    let left_reach = (count - 1) / 2;
    let right_reach = count / 2;
    let amplitudes: Vec<f64> = (0..n)
        .map(|j| {
            let lo = j.saturating_sub(left_reach);
            let hi = (j + right_reach).min(n - 1);
            let span = &trace.amplitudes[lo..=hi];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect();
    Ok(DecayTrace {
        times: trace.times.clone(),
        amplitudes,
        filter_state: FilterState::MovingAverage { window_s },
    })
}

/// Full chain: synthesize one window per survival point, extract the carrier
/// amplitude, and assemble the decay trace. Windows are created and dropped
/// one at a time.
pub fn pipeline_round_trip(
    survival: &EvolutionTrace,
    config: &AcquisitionConfig,
) -> Result<DecayTrace, AcquisitionError> {
    config.validate()?;
    survival
        .validate()
        .map_err(|e| AcquisitionError::InvalidTrace(e.to_string()))?;
    let mut amplitudes = Vec::with_capacity(survival.len());
    for (t, s) in survival.times.iter().zip(&survival.survival) {
        let phase = match config.phase_model {
            PhaseModel::Coherent => (TAU * config.heterodyne_frequency_hz * t) % TAU,
            PhaseModel::Random => window_rng(config, *t).random::<f64>() * TAU,
        };
        let window = synthesize_window(*s, phase, *t, config)?;
        amplitudes.push(extract_amplitude(&window, config)?);
    }
    Ok(DecayTrace {
        times: survival.times.clone(),
        amplitudes,
        filter_state: FilterState::None,
    })
}

/// Sidecar describing a binary window batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowBatchSidecar {
    pub delta_t_s: f64,
    pub t_acq_s: f64,
    pub f_het_hz: f64,
    pub start_times_s: Vec<f64>,
}

/// Write windows as concatenated little-endian f32 samples plus a JSON
/// sidecar. All windows must share one length.
pub fn write_window_batch(
    windows: &[RawWindow],
    config: &AcquisitionConfig,
    data_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<(), AcquisitionError> {
    let first_len = match windows.first() {
        Some(w) => w.samples.len(),
        None => return Err(AcquisitionError::InvalidTrace("no windows given".into())),
    };
    let mut bytes = Vec::with_capacity(windows.len() * first_len * 4);
    for w in windows {
        if w.samples.len() != first_len {
            return Err(AcquisitionError::InvalidTrace(
                "windows differ in length".into(),
            ));
        }
        for s in &w.samples {
            bytes.extend_from_slice(&(*s as f32).to_le_bytes());
        }
    }
    fs::write(data_path, bytes)?;
    let sidecar = WindowBatchSidecar {
        delta_t_s: config.sample_interval_s,
        t_acq_s: config.window_length_s,
        f_het_hz: config.heterodyne_frequency_hz,
        start_times_s: windows.iter().map(|w| w.start_time_s).collect(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| AcquisitionError::Format(e.to_string()))?;
    fs::write(sidecar_path, json)?;
    Ok(())
}

/// Read a window batch written by [`write_window_batch`].
pub fn read_window_batch(
    data_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<(Vec<RawWindow>, WindowBatchSidecar), AcquisitionError> {
    let sidecar: WindowBatchSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)
        .map_err(|e| AcquisitionError::Format(e.to_string()))?;
    let bytes = fs::read(data_path)?;
    let n_windows = sidecar.start_times_s.len();
    if n_windows == 0 {
        return Err(AcquisitionError::Format("sidecar lists no windows".into()));
    }
    if bytes.len() % (4 * n_windows) != 0 {
        return Err(AcquisitionError::Format(format!(
            "{} bytes do not divide into {n_windows} equal windows",
            bytes.len()
        )));
    }
    let per_window = bytes.len() / (4 * n_windows);
    let mut windows = Vec::with_capacity(n_windows);
    let mut offset = 0;
    for &start in &sidecar.start_times_s {
        let samples: Vec<f64> = (0..per_window)
            .map(|i| {
                let at = offset + 4 * i;
                f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64
            })
            .collect();
        offset += 4 * per_window;
        windows.push(RawWindow {
            samples,
            start_time_s: start,
        });
    }
    Ok((windows, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::TraceMetadata;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn tone_config() -> AcquisitionConfig {
        AcquisitionConfig::new(7)
    }

    fn survival_fixture(values: &[f64], tau: f64) -> EvolutionTrace {
        EvolutionTrace::new(
            (0..values.len()).map(|n| n as f64 * tau).collect(),
            values.to_vec(),
            None,
            TraceMetadata::bare(1),
        )
        .unwrap()
    }

    #[test]
    fn default_window_has_two_thousand_samples_and_forty_periods() {
        let config = tone_config();
        assert_eq!(config.samples_per_window(), 2000);
        let w = synthesize_window(1.0, 0.0, 0.0, &config).unwrap();
        assert_eq!(w.samples.len(), 2000);
        // 40 carrier periods: the sample pattern repeats every 50 samples.
        for i in 0..1950 {
            assert_abs_diff_eq!(w.samples[i], w.samples[i + 50], epsilon = 1e-9);
        }
        let crossings = w
            .samples
            .windows(2)
            .filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0))
            .count();
        assert_eq!(crossings, 80);
    }

    #[test]
    fn zero_amplitude_gives_a_zero_window_and_doubling_is_linear() {
        let config = tone_config();
        let zero = synthesize_window(0.0, 0.3, 1e-3, &config).unwrap();
        assert!(zero.samples.iter().all(|s| *s == 0.0));
        let one = synthesize_window(0.7, 0.3, 1e-3, &config).unwrap();
        let two = synthesize_window(1.4, 0.3, 1e-3, &config).unwrap();
        for (a, b) in one.samples.iter().zip(&two.samples) {
            assert_abs_diff_eq!(2.0 * a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn on_bin_tone_amplitude_is_recovered_exactly() {
        let mut config = tone_config();
        config.polarization_scale = 223.0;
        for phase in [0.0, 0.7, 2.9] {
            let w = synthesize_window(0.42, phase, 0.0, &config).unwrap();
            let a = extract_amplitude(&w, &config).unwrap();
            assert_relative_eq!(a, 223.0 * 0.42, max_relative = 1e-9);
        }
    }

    #[test]
    fn extraction_matches_an_fft_oracle() {
        let config = tone_config();
        let mut noisy = tone_config();
        noisy.noise_sigma = 0.5;
        let w = synthesize_window(0.9, 1.1, 3e-4, &noisy).unwrap();
        let direct = extract_amplitude(&w, &config).unwrap();

        let mut planner = rustfft::FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(w.samples.len());
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> = w
            .samples
            .iter()
            .map(|s| rustfft::num_complex::Complex::new(*s, 0.0))
            .collect();
        fft.process(&mut buf);
        let bin = (config.heterodyne_frequency_hz
            * config.sample_interval_s
            * w.samples.len() as f64)
            .round() as usize;
        let oracle = 2.0 / w.samples.len() as f64 * buf[bin].norm();
        assert_relative_eq!(direct, oracle, max_relative = 1e-12);
    }

    #[test]
    fn worst_case_half_bin_scalloping_keeps_most_of_the_amplitude() {
        let mut config = tone_config();
        // Shift the carrier half a DFT bin: f = (k + 1/2)/(L Δt).
        let l = config.samples_per_window() as f64;
        config.heterodyne_frequency_hz = (40.5) / (l * config.sample_interval_s);
        let w = synthesize_window(1.0, 0.0, 0.0, &config).unwrap();
        let a = extract_amplitude(&w, &config).unwrap();
        assert!(a >= 0.63, "half-bin scalloping left {a:.4}");
        assert!(a < 0.68, "half-bin loss should be near 2/π, got {a:.4}");
    }

    #[test]
    fn tones_three_bins_off_carrier_are_attenuated_tenfold() {
        let config = tone_config();
        let l = config.samples_per_window() as f64;
        let bin_hz = 1.0 / (l * config.sample_interval_s);
        let on = extract_amplitude(&synthesize_window(1.0, 0.0, 0.0, &config).unwrap(), &config)
            .unwrap();
        for offset_bins in [3.0, 3.5, 4.5, 7.3, 20.0] {
            let mut detuned = config.clone();
            detuned.heterodyne_frequency_hz += offset_bins * bin_hz;
            // Synthesize at the detuned frequency, extract at the carrier bin.
            let w = synthesize_window(1.0, 0.4, 0.0, &detuned).unwrap();
            let a = extract_amplitude(&w, &config).unwrap();
            assert!(
                a <= 0.1 * on,
                "offset {offset_bins} bins leaked {a:.4} vs on-bin {on:.4}"
            );
        }
    }

    #[test]
    fn zero_window_extracts_zero_and_short_windows_are_rejected() {
        let config = tone_config();
        let zero = synthesize_window(0.0, 0.0, 0.0, &config).unwrap();
        assert_eq!(extract_amplitude(&zero, &config).unwrap(), 0.0);
        let stub = RawWindow {
            samples: vec![1.0],
            start_time_s: 0.0,
        };
        assert!(matches!(
            extract_amplitude(&stub, &config),
            Err(AcquisitionError::WindowTooShort { len: 1 })
        ));
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let good = tone_config();
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.sample_interval_s = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.window_length_s = 0.4e-6;
        assert!(bad.validate().is_err(), "under ten carrier periods");
        let mut bad = good.clone();
        bad.heterodyne_frequency_hz = 6e8;
        assert!(bad.validate().is_err(), "above Nyquist");
        let mut bad = good.clone();
        bad.noise_sigma = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.polarization_scale = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.t1_envelope_s = Some(-3.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn t1_envelope_damps_later_windows() {
        let mut config = tone_config();
        config.t1_envelope_s = Some(2.0);
        let early = synthesize_window(1.0, 0.0, 0.0, &config).unwrap();
        let late = synthesize_window(1.0, 0.0, 4.0, &config).unwrap();
        let a0 = extract_amplitude(&early, &config).unwrap();
        let a1 = extract_amplitude(&late, &config).unwrap();
        assert_relative_eq!(a1 / a0, (-2.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn assemble_trace_packages_amplitudes_on_the_pulse_grid() {
        let trace = assemble_trace(&[1.0, 0.8, 0.6], 1e-4).unwrap();
        assert_eq!(trace.times, vec![0.0, 1e-4, 2e-4]);
        assert_eq!(trace.amplitudes, vec![1.0, 0.8, 0.6]);
        assert_eq!(trace.filter_state, FilterState::None);
        assert!(assemble_trace(&[], 1e-4).is_err());
        assert!(assemble_trace(&[1.0], 0.0).is_err());
    }

    #[test]
    fn moving_average_smooths_and_marks_the_trace() {
        let constant = assemble_trace(&[0.5; 10], 1e-3).unwrap();
        let filtered = moving_average(&constant, 4e-3).unwrap();
        assert_eq!(filtered.amplitudes, vec![0.5; 10]);
        assert_eq!(
            filtered.filter_state,
            FilterState::MovingAverage { window_s: 4e-3 }
        );

        // Alternating signal under an even window cancels in the interior;
        // the shrinking right edge keeps a single raw point.
        let alternating = assemble_trace(&[1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 1e-3).unwrap();
        let filtered = moving_average(&alternating, 2e-3).unwrap();
        for v in &filtered.amplitudes[..5] {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(filtered.amplitudes[5], 0.0, epsilon = 1e-15);

        assert!(matches!(
            moving_average(&constant, 1e-4),
            Err(AcquisitionError::WindowSmallerThanStep { .. })
        ));
    }

    #[test]
    fn moving_average_cuts_white_noise_variance_by_the_window_factor() {
        let mut rng = StdRng::seed_from_u64(99);
        let normal = Normal::new(1.0, 0.1).unwrap();
        let raw: Vec<f64> = (0..4000).map(|_| normal.sample(&mut rng)).collect();
        let trace = assemble_trace(&raw, 1e-3).unwrap();
        let filtered = moving_average(&trace, 8e-3).unwrap();
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
        };
        // Interior points average 8 independent samples.
        let ratio = var(&filtered.amplitudes[8..3992]) / var(&raw[8..3992]);
        assert!(
            (0.06..0.22).contains(&ratio),
            "variance ratio {ratio:.3} far from 1/8"
        );
    }

    #[test]
    fn moving_average_approximately_preserves_the_mean() {
        let values: Vec<f64> = (0..200).map(|k| 1.0 / (1.0 + 0.05 * k as f64)).collect();
        let trace = assemble_trace(&values, 1e-3).unwrap();
        let filtered = moving_average(&trace, 5e-3).unwrap();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        // Exact in the interior; edge shrinkage perturbs at most
        // window/length of the points.
        assert_abs_diff_eq!(
            mean(&filtered.amplitudes),
            mean(&values),
            epsilon = 5.0 / 200.0
        );
    }

    #[test]
    fn noise_free_pipeline_reproduces_the_survival_trace() {
        let mut config = tone_config();
        config.polarization_scale = 223.0;
        let values = [1.0, 0.93, 0.81, 0.66, 0.52, 0.41];
        let survival = survival_fixture(&values, 1e-4);
        let out = pipeline_round_trip(&survival, &config).unwrap();
        for (a, s) in out.amplitudes.iter().zip(&values) {
            assert_relative_eq!(a / 223.0, *s, max_relative = 1e-6);
        }
        // ε enters as an exact linear factor.
        config.polarization_scale = 1.0;
        let unit = pipeline_round_trip(&survival, &config).unwrap();
        for (a, u) in out.amplitudes.iter().zip(&unit.amplitudes) {
            assert_relative_eq!(*a, 223.0 * u, max_relative = 1e-12);
        }
    }

    #[test]
    fn pipeline_rectifies_negative_survival_into_magnitudes() {
        let config = tone_config();
        let survival = survival_fixture(&[1.0, -0.4, 0.2], 1e-4);
        let out = pipeline_round_trip(&survival, &config).unwrap();
        assert_relative_eq!(out.amplitudes[1], 0.4, max_relative = 1e-9);
        assert!(out.validate().is_ok());
    }

    #[test]
    fn noisy_pipeline_is_deterministic_and_meets_the_snr_budget() {
        let mut config = tone_config();
        // Amplitude SNR 100 per window: σ = A·sqrt(L/2)/100.
        config.noise_sigma = (1000.0f64).sqrt() / 100.0;
        let values = vec![1.0; 100];
        let survival = survival_fixture(&values, 1e-4);
        let a = pipeline_round_trip(&survival, &config).unwrap();
        let b = pipeline_round_trip(&survival, &config).unwrap();
        assert_eq!(a, b);
        let rms = (a
            .amplitudes
            .iter()
            .map(|x| (x - 1.0) * (x - 1.0))
            .sum::<f64>()
            / a.amplitudes.len() as f64)
            .sqrt();
        assert!(rms < 0.05, "RMS relative error {rms:.4} at SNR 100");
        let mut reseeded = config.clone();
        reseeded.rng_seed = config.rng_seed + 1;
        let c = pipeline_round_trip(&survival, &reseeded).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_phase_model_leaves_magnitudes_unchanged() {
        let mut config = tone_config();
        config.phase_model = PhaseModel::Random;
        let values = [1.0, 0.7, 0.4];
        let survival = survival_fixture(&values, 1e-4);
        let out = pipeline_round_trip(&survival, &config).unwrap();
        for (a, s) in out.amplitudes.iter().zip(&values) {
            assert_relative_eq!(*a, *s, max_relative = 1e-9);
        }
    }

    #[test]
    fn window_batch_round_trips_through_binary_and_sidecar() {
        let mut config = tone_config();
        config.noise_sigma = 0.2;
        let windows: Vec<RawWindow> = (0..4)
            .map(|n| synthesize_window(0.9, 0.1, n as f64 * 1e-4, &config).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("windows.f32");
        let sidecar = dir.path().join("windows.json");
        write_window_batch(&windows, &config, &data, &sidecar).unwrap();
        let (read, meta) = read_window_batch(&data, &sidecar).unwrap();
        assert_eq!(meta.delta_t_s, config.sample_interval_s);
        assert_eq!(meta.t_acq_s, config.window_length_s);
        assert_eq!(meta.f_het_hz, config.heterodyne_frequency_hz);
        assert_eq!(read.len(), windows.len());
        for (orig, back) in windows.iter().zip(&read) {
            assert_eq!(orig.start_time_s, back.start_time_s);
            for (a, b) in orig.samples.iter().zip(&back.samples) {
                // Storage is f32; equality holds at f32 precision.
                assert_eq!(*a as f32, *b as f32);
                assert_eq!(*b, *a as f32 as f64);
            }
        }
        let text = fs::read_to_string(&sidecar).unwrap();
        for key in ["delta_t_s", "t_acq_s", "f_het_hz", "start_times_s"] {
            assert!(text.contains(key), "sidecar missing {key}");
        }
    }

    #[test]
    fn decay_trace_csv_round_trips() {
        let trace = assemble_trace(&[1.0, 0.5, 0.25], 2e-4).unwrap();
        let filtered = moving_average(&trace, 4e-4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decay.csv");
        filtered.write_csv(&path).unwrap();
        let back = DecayTrace::read_csv(&path).unwrap();
        assert_eq!(filtered, back);
        assert!(DecayTrace::from_csv_str("time_s,amplitude\n0,1\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Extraction is homogeneous: scaling every sample scales the output.
        #[test]
        fn extraction_is_linear_in_the_window(scale in 0.0..8.0f64, seed in 0u64..500) {
            let mut config = tone_config();
            config.noise_sigma = 0.3;
            config.rng_seed = seed;
            let w = synthesize_window(0.8, 0.2, 1e-3, &config).unwrap();
            let scaled = RawWindow {
                samples: w.samples.iter().map(|s| scale * s).collect(),
                start_time_s: w.start_time_s,
            };
            let a = extract_amplitude(&w, &config).unwrap();
            let b = extract_amplitude(&scaled, &config).unwrap();
            prop_assert!((b - scale * a).abs() <= 1e-9 * (1.0 + scale * a));
        }
    }
}

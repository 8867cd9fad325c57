//! Cross-module checks that exercise the full lattice -> operators ->
//! propagation -> analysis chain on small but physically meaningful systems.

use prethermal_core::lattice::{
    generate_lattice_with_count, sample_disorder, DisorderModel, LatticeConfig,
};
use prethermal_core::operators::HamiltonianSet;
use prethermal_core::propagation::{cycle_unitary, evolve_survival, PulseSequenceSpec};
use prethermal_core::{
    assemble_trace, harmonic_spectrum, median_coupling, segment_regimes, Regime,
    SegmentationOptions,
};
use std::f64::consts::PI;

/// Ensemble-averaged rectified survival for a pi/2 train on a fixed 6-spin
/// cluster, over 8 on-site disorder draws.
fn ensemble_survival(zeta: f64, pulses: usize) -> (Vec<f64>, f64) {
    let config = LatticeConfig::new(6.0 / 216.0, 3, 88);
    let bare = generate_lattice_with_count(&config, 6, 400).unwrap();
    let j = median_coupling(&bare).unwrap();
    let tau = zeta / j;
    let r_count = 8u64;
    let mut avg = vec![0.0f64; pulses];
    for r in 0..r_count {
        let model = DisorderModel::gaussian(0.1, 1000 + r);
        let lat = sample_disorder(&bare, &model).unwrap();
        let h = HamiltonianSet::from_lattice(&lat).unwrap();
        let seq = PulseSequenceSpec::delta(PI / 2.0, tau, pulses);
        let prop = cycle_unitary(&h, &seq).unwrap();
        let trace = evolve_survival(&prop, pulses);
        for (a, s) in avg.iter_mut().zip(trace.survival.iter()) {
            *a += s / r_count as f64;
        }
    }
    (avg.iter().map(|v| v.abs()).collect(), tau)
}

fn segmentation(rect: &[f64], tau: f64) -> prethermal_core::RegimeSegmentation {
    let trace = assemble_trace(rect, tau).unwrap();
    let options = SegmentationOptions {
        smoothing_window_s: Some(12.0 * tau),
        ..SegmentationOptions::default()
    };
    segment_regimes(&trace, &options).unwrap()
}

#[test]
fn heated_drive_collapses_to_the_finite_size_floor() {
    let pulses = 600;
    let (rect, tau) = ensemble_survival(0.5, pulses);

    // Collapse is immediate at zeta = 0.5: below half signal within 10 kicks.
    let below_half = rect.iter().position(|v| *v < 0.5).unwrap();
    assert!(below_half <= 10, "collapse took {below_half} kicks");

    // The late-time value is the diagonal-ensemble plateau of a 64-state
    // system, not zero. At this size it sits near 0.2, an order of magnitude
    // above the 0.02 infinite-temperature threshold, so the segmentation
    // must label the tail as unconstrained decay (III) and never as IV.
    let tail = &rect[pulses - 60..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(
        (0.08..0.35).contains(&tail_mean),
        "tail mean {tail_mean} outside the finite-size plateau band"
    );

    let seg = segmentation(&rect, tau);
    assert_eq!(*seg.labels.last().unwrap(), Regime::III);
    assert!(seg.labels.iter().all(|l| *l != Regime::IV));
    assert!(seg.boundary_iii_iv_s.is_none());
}

#[test]
fn weakly_coupled_drive_stays_prethermal_with_no_regime_iv() {
    let pulses = 600;
    let (rect, tau) = ensemble_survival(0.02, pulses);

    // At zeta = 0.02 the kicked magnetization barely moves over 600 cycles.
    let min = rect.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min > 0.9, "prethermal trace dipped to {min}");

    let seg = segmentation(&rect, tau);
    assert!(seg.labels.iter().all(|l| *l != Regime::IV));
    assert!(seg.boundary_iii_iv_s.is_none());
}

#[test]
fn quarter_frequency_primary_lands_within_one_bin() {
    // Staged 6-spin cluster: a +-c field pair across the dominant bond plus
    // an isolated +-c pair, which puts the single-quantum response exactly
    // at theta/(2 pi tau) with one-bin accuracy over a 192-cycle record.
    let config = LatticeConfig::new(6.0 / 216.0, 3, 123);
    let bare = generate_lattice_with_count(&config, 6, 400).unwrap();
    let window = 192usize;
    let zeta = 0.02f64;
    let phase = 0.20f64;
    let d1 = 427.0f64;
    let tau = zeta / d1;
    let c = phase / (2.0 * PI * tau);
    let mut lat = bare.clone();
    for v in lat.disorder_hz.iter_mut() {
        *v = 0.0;
    }
    lat.disorder_hz[0] = c;
    lat.disorder_hz[3] = -c;
    lat.disorder_hz[2] = c;
    lat.disorder_hz[4] = -c;
    let h = HamiltonianSet::from_lattice(&lat).unwrap();
    let seq = PulseSequenceSpec::delta(PI / 2.0, tau, window);
    let prop = cycle_unitary(&h, &seq).unwrap();
    let trace = evolve_survival(&prop, window);
    let spectrum = harmonic_spectrum(&trace.survival[..window], tau).unwrap();
    let primary = spectrum.primary_frequency_hz().unwrap();
    let bin = 1.0 / (window as f64 * tau);
    assert!(
        (primary * tau - 0.25).abs() <= bin * tau,
        "primary at {} / tau",
        primary * tau
    );
}

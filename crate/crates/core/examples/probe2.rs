use prethermal_core::acquisition::{DecayTrace, FilterState};
use prethermal_core::analysis::{fit_stretched_exponential, one_over_e_lifetime};
use prethermal_core::lattice::{
    generate_lattice_with_count, median_coupling, sample_disorder, DisorderModel, LatticeConfig,
};
use prethermal_core::operators::HamiltonianSet;
use prethermal_core::propagation::{
    cycle_unitary, evolve_survival_sampled, evolve_with_ac_field, fid, flip_angle_sweep,
    PulseSequenceSpec,
};
use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

const SIX_SPIN_SEEDS: [u64; 4] = [309, 312, 325, 327];

fn log_pulse_grid(max: u64, per_decade: usize) -> Vec<u64> {
    let mut out = vec![0u64, 1];
    let mut x = 1.0f64;
    let step = 10f64.powf(1.0 / per_decade as f64);
    while x < max as f64 {
        x *= step;
        let n = x.round() as u64;
        if n > *out.last().unwrap() && n <= max {
            out.push(n);
        }
    }
    out
}

/// Floor-normalized stretched-exponential lifetime: subtract the late-time
/// plateau (mean of the last `tail` samples), rescale to start at 1, fit
/// A exp[-(t/T)^alpha]; T is the 1/e time of the normalized decay.
fn plateau_referenced_lifetime(times: &[f64], s: &[f64], tail: usize) -> (f64, f64, f64) {
    let floor = s[s.len() - tail..].iter().sum::<f64>() / tail as f64;
    let normalized: Vec<f64> = s.iter().map(|&v| (v - floor) / (1.0 - floor)).collect();
    let trace = DecayTrace {
        times: times.to_vec(),
        amplitudes: normalized,
        filter_state: FilterState::None,
    };
    let fit = fit_stretched_exponential(&trace, None).unwrap();
    (fit.lifetime_s, fit.exponent, floor)
}

fn main() {
    let t0 = Instant::now();

    // ---- C3 + C7: 8-spin ensemble, plateau-referenced stretched lifetimes ----
    let r_total = 16usize;
    let mut lattices = Vec::new();
    for r in 0..r_total {
        let cfg = LatticeConfig::new(8.0 / 216.0, 3, 4000 + r as u64);
        let mut lat = generate_lattice_with_count(&cfg, 8, 400).unwrap();
        sample_disorder(&mut lat, &DisorderModel::gaussian(0.1, 9000 + r as u64)).unwrap();
        lattices.push(lat);
    }
    let mut meds: Vec<f64> = lattices.iter().map(|l| median_coupling(l).unwrap()).collect();
    meds.sort_by(f64::total_cmp);
    let j_star = 0.5 * (meds[r_total / 2 - 1] + meds[r_total / 2]);
    println!("J* = {j_star:.2} Hz");

    let grid = log_pulse_grid(1_000_000_000_000, 24);
    let hams: Vec<HamiltonianSet> =
        lattices.iter().map(|l| HamiltonianSet::from_lattice(l).unwrap()).collect();
    let mut lifetimes = Vec::new();
    for &zeta in &[0.02, 0.05, 0.1, 0.2, 0.4] {
        let tau = zeta / j_star;
        let mut mean = vec![0.0f64; grid.len()];
        for h in &hams {
            let seq = PulseSequenceSpec::delta(FRAC_PI_2, tau, *grid.last().unwrap() as usize);
            let prop = cycle_unitary(h, &seq).unwrap();
            let tr = evolve_survival_sampled(&prop, &grid);
            for (m, s) in mean.iter_mut().zip(&tr.survival) {
                *m += s / r_total as f64;
            }
        }
        let times: Vec<f64> = grid.iter().map(|&n| n as f64 * tau).collect();
        let (t, alpha, floor) = plateau_referenced_lifetime(&times, &mean, 48);
        println!(
            "zeta {zeta:>5}: floor {floor:.3}  alpha {alpha:.3}  T*J {:.4e}  (N_T {:.1})",
            t * j_star,
            t / tau
        );
        lifetimes.push(t * j_star);
    }
    let monotone = lifetimes.windows(2).all(|w| w[1] < w[0]);
    println!("lifetimes*J {lifetimes:?}\nstrictly decreasing with zeta: {monotone}");

    // C7: FID on the same ensemble, same convention.
    let fid_times: Vec<f64> = (0..300)
        .map(|k| 1e-7 * (10f64.powf(k as f64 / 30.0)))
        .take_while(|&t| t < 400.0 / j_star)
        .collect();
    let mut mean = vec![0.0f64; fid_times.len()];
    for h in &hams {
        let tr = fid(h, &fid_times).unwrap();
        for (m, s) in mean.iter_mut().zip(&tr.survival) {
            *m += s / r_total as f64;
        }
    }
    let (fid_t, fid_alpha, fid_floor) = plateau_referenced_lifetime(&fid_times, &mean, 30);
    println!(
        "FID: floor {fid_floor:.3} alpha {fid_alpha:.3} T*J {:.3e}  driven(0.02)/fid ratio {:.1}",
        fid_t * j_star,
        lifetimes[0] / (fid_t * j_star)
    );
    println!("-- elapsed {:?}", t0.elapsed());

    // ---- C5: flip-angle sweep, 6 spins, R=4, zeta=0.1, 240 pulses ----
    let n_angles = 126usize;
    let angles: Vec<f64> = (1..=n_angles).map(|k| k as f64 * 2.0 * PI / n_angles as f64).collect();
    let mut integrated = vec![0.0f64; n_angles];
    for (r, &seed) in SIX_SPIN_SEEDS.iter().enumerate() {
        let cfg = LatticeConfig::new(6.0 / 216.0, 3, seed);
        let mut lat = generate_lattice_with_count(&cfg, 6, 400).unwrap();
        sample_disorder(&mut lat, &DisorderModel::gaussian(0.1, 700 + r as u64)).unwrap();
        let j = median_coupling(&lat).unwrap();
        let h = HamiltonianSet::from_lattice(&lat).unwrap();
        let template = PulseSequenceSpec::delta(FRAC_PI_2, 0.1 / j, 240);
        let pts = flip_angle_sweep(&h, &template, &angles).unwrap();
        for (acc, p) in integrated.iter_mut().zip(&pts) {
            *acc += p.integrated_survival / SIX_SPIN_SEEDS.len() as f64;
        }
    }
    let mut minima = Vec::new();
    for i in 1..n_angles - 1 {
        if integrated[i] < integrated[i - 1] && integrated[i] < integrated[i + 1] {
            minima.push(angles[i]);
        }
    }
    if integrated[n_angles - 1] < integrated[n_angles - 2] {
        minima.push(angles[n_angles - 1]);
    }
    println!("C5 minima at angles: {:?}", minima.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>());
    let near_pi = minima.iter().any(|&a| (a - PI).abs() <= 0.1);
    let near_2pi = minima.iter().any(|&a| (a - 2.0 * PI).abs() <= 0.1);
    println!("near pi: {near_pi}, near 2pi: {near_2pi}");
    for (k, a) in angles.iter().enumerate() {
        if (a - PI).abs() < 0.3 || (a - 2.0 * PI).abs() < 0.3 {
            println!("  theta {a:.3}  I {:.2}", integrated[k]);
        }
    }
    println!("-- elapsed {:?}", t0.elapsed());

    // ---- C6: AC sensing at tau = 100 us, three frequencies, amplitude scan ----
    let tau = 100e-6;
    let pulses = 3000usize;
    for &amp in &[25.0f64, 50.0, 100.0] {
        let mut rates = Vec::new();
        for &f_ac in &[1750.0f64, 2500.0, 3250.0] {
            let mut mean = vec![0.0f64; pulses + 1];
            for (r, &seed) in SIX_SPIN_SEEDS.iter().enumerate() {
                let cfg = LatticeConfig::new(6.0 / 216.0, 3, seed);
                let mut lat = generate_lattice_with_count(&cfg, 6, 400).unwrap();
                sample_disorder(&mut lat, &DisorderModel::gaussian(0.1, 700 + r as u64)).unwrap();
                let h = HamiltonianSet::from_lattice(&lat).unwrap();
                let seq = PulseSequenceSpec::delta(FRAC_PI_2, tau, pulses)
                    .with_ac_field(amp, f_ac, 0.0);
                let tr = evolve_with_ac_field(&h, &seq).unwrap();
                for (m, s) in mean.iter_mut().zip(&tr.survival) {
                    *m += s / SIX_SPIN_SEEDS.len() as f64;
                }
            }
            let times: Vec<f64> = (0..=pulses).map(|n| n as f64 * tau).collect();
            let trace =
                DecayTrace { times, amplitudes: mean.clone(), filter_state: FilterState::None };
            let t1e = one_over_e_lifetime(&trace);
            let rate = t1e.as_ref().map(|t| 1.0 / t).unwrap_or(f64::NAN);
            println!(
                "amp {amp:>5} f {f_ac:>6}: t1e {:?}  rate {rate:.3}  s_end {:.3}",
                t1e.as_ref().map(|t| format!("{t:.4}")).ok(),
                mean[pulses]
            );
            rates.push(rate);
        }
        let ok = rates[1] >= 1.25 * rates[0] && rates[1] >= 1.25 * rates[2];
        println!("amp {amp}: rates {rates:?}  contrast ok: {ok}");
    }
    println!("-- total elapsed {:?}", t0.elapsed());
}

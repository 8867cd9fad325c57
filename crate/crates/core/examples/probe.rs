use prethermal_core::analysis::one_over_e_lifetime;
use prethermal_core::acquisition::{DecayTrace, FilterState};
use prethermal_core::lattice::{
    generate_lattice_with_count, median_coupling, sample_disorder, DisorderModel, LatticeConfig,
};
use prethermal_core::operators::HamiltonianSet;
use prethermal_core::propagation::{cycle_unitary, evolve_survival_sampled, fid, PulseSequenceSpec};
use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

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

fn main() {
    let t0 = Instant::now();
    let r_total = 16usize;
    let zetas = [0.02, 0.05, 0.1, 0.2, 0.4];

    // Shared ensemble: R lattices + disorder draws, one per realization.
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
    println!("ensemble median J = {j_star:.2} Hz, meds {meds:?}");

    let grid = log_pulse_grid(1_000_000_000_000, 12);
    println!("grid points {}", grid.len());

    for &zeta in &zetas {
        let tau = zeta / j_star;
        let mut mean = vec![0.0f64; grid.len()];
        for lat in &lattices {
            let h = HamiltonianSet::from_lattice(lat).unwrap();
            let seq = PulseSequenceSpec::delta(FRAC_PI_2, tau, *grid.last().unwrap() as usize);
            let prop = cycle_unitary(&h, &seq).unwrap();
            let tr = evolve_survival_sampled(&prop, &grid);
            for (m, s) in mean.iter_mut().zip(&tr.survival) {
                *m += s / r_total as f64;
            }
        }
        let times: Vec<f64> = grid.iter().map(|&n| n as f64 * tau).collect();
        let trace = DecayTrace { times: times.clone(), amplitudes: mean.clone(), filter_state: FilterState::None };
        let t1e = one_over_e_lifetime(&trace);
        let tail = &mean[mean.len() - 6..];
        println!(
            "zeta {zeta:>5}: tau {tau:.3e}  t1e {:?}  t1e*J {:?}  tail {:?}",
            t1e.as_ref().map(|t| format!("{t:.3e}")).ok(),
            t1e.as_ref().map(|t| format!("{:.3e}", t * j_star)).ok(),
            tail.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        );
        // where does it sit at a few checkpoints
        for &chk in &[100u64, 10_000, 1_000_000, 100_000_000, 1_000_000_000_000] {
            let idx = grid.iter().position(|&n| n >= chk).unwrap();
            print!("  s({:.0e})={:.3}", grid[idx] as f64, mean[idx]);
        }
        println!();
    }

    // FID on the same ensemble: times log-spaced to 200/J.
    let fid_times: Vec<f64> = (0..240)
        .map(|k| 1e-6 * (10f64.powf(k as f64 / 30.0)))
        .take_while(|&t| t < 200.0 / j_star)
        .collect();
    let mut mean = vec![0.0f64; fid_times.len()];
    for lat in &lattices {
        let h = HamiltonianSet::from_lattice(lat).unwrap();
        let tr = fid(&h, &fid_times).unwrap();
        for (m, s) in mean.iter_mut().zip(&tr.survival) {
            *m += s / r_total as f64;
        }
    }
    let trace = DecayTrace { times: fid_times, amplitudes: mean, filter_state: FilterState::None };
    println!("FID t1e {:?}  ({} pts)", one_over_e_lifetime(&trace).map(|t| t * j_star), trace.times.len());
    println!("elapsed {:?}", t0.elapsed());
}

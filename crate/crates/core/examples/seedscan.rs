use prethermal_core::lattice::{generate_lattice_with_count, median_coupling, LatticeConfig};
fn main() {
    for seed in 300..340u64 {
        let cfg = LatticeConfig::new(6.0 / 216.0, 3, seed);
        match generate_lattice_with_count(&cfg, 6, 400) {
            Ok(l) => println!("seed {seed}: median {:.1} Hz, bonds {}", median_coupling(&l).unwrap(), l.couplings.len()),
            Err(e) => println!("seed {seed}: {e}"),
        }
    }
}

//! Gate-application throughput at a given lattice size.
//!
//! `cargo run --release -p catmap-core --example throughput -- 7 20`

use std::time::Instant;

use catmap::circuit::{build_cat_iteration, build_line_prep};
use catmap::{LatticeSpec, NoiseModel, StateVector};

fn main() -> catmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_q: u32 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    let iters: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let spec = LatticeSpec::new(n_q)?;
    let circ = build_cat_iteration(spec);
    let mut state = StateVector::zero(spec)?;
    state.apply_circuit(&build_line_prep(spec), None)?;

    let mut exact = state.clone();
    let t0 = Instant::now();
    for _ in 0..iters {
        exact.apply_circuit(&circ, None)?;
    }
    let exact_s = t0.elapsed().as_secs_f64();

    let mut noise = NoiseModel::new(0.01, 1)?;
    let t0 = Instant::now();
    for _ in 0..iters {
        state.apply_circuit(&circ, Some(&mut noise))?;
    }
    let noisy_s = t0.elapsed().as_secs_f64();

    let gates = (iters * circ.len()) as f64;
    println!(
        "n_q={n_q} qubits={} iterations={iters} exact: {:.0} gates/s ({:.2} ms/iter), noisy: {:.0} gates/s ({:.2} ms/iter)",
        spec.qubit_count(),
        gates / exact_s,
        1e3 * exact_s / iters as f64,
        gates / noisy_s,
        1e3 * noisy_s / iters as f64,
    );
    Ok(())
}

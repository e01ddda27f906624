//! Normal modes and the exact frequency response of a small network.
//!
//! ```text
//! cargo run --example normal_modes
//! ```

use oscqpe::classical::{diagonalize, response_local, response_nonlocal, PoleGuard};
use oscqpe::network::{build_matrices, OscillatorNetwork};

fn main() -> oscqpe::Result<()> {
    let net = OscillatorNetwork::from_json_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/mixed_masses.json"))?;
    let sys = build_matrices(&net);
    println!("{} oscillators, s = {}, ||H||_max = {:.4}, alpha = {:.4}", net.len(), sys.sparsity, sys.max_norm, sys.alpha);

    let modal = diagonalize(&sys)?;
    for (j, lambda) in modal.eigenvalues.iter().enumerate() {
        let weights: Vec<String> = (0..net.len()).map(|u| format!("{:.4}", modal.modes[(u, j)].powi(2))).collect();
        println!("mode {}: lambda = {lambda:.6}  omega = {:.6}  W^2 = [{}]", j + 1, lambda.sqrt(), weights.join(", "));
    }

    // G(i omega) blows up at omega^2 = lambda and changes sign across each pole
    let local = response_local(&modal, 0, net.masses()[0]);
    let cross = response_nonlocal(&modal, 0, 2, net.masses()[0], net.masses()[2]);
    let omegas: Vec<f64> = (0..12).map(|k| 0.25 * k as f64).collect();
    let guard = PoleGuard { allow_poles: true, ..PoleGuard::default() };
    let g00 = local.evaluate_frequencies(&omegas, guard)?;
    let g02 = cross.evaluate_frequencies(&omegas, guard)?;
    println!("\n omega     G_11(i w)      G_13(i w)");
    for ((w, a), b) in omegas.iter().zip(&g00).zip(&g02) {
        println!("{w:6.2} {:14.6} {:14.6}", a.re, b.re);
    }
    Ok(())
}

//! Phase estimation of the walk operator with all three backends on the
//! two-oscillator system: the gate-level circuit, the dense walk matrix and
//! the closed-form distribution.
//!
//! ```text
//! cargo run --release --example phase_estimation
//! ```

use oscqpe::blockenc::EncodedMatrix;
use oscqpe::network::{build_matrices, OscillatorNetwork};
use oscqpe::qpe::{phase_of, run_qpe, total_variation, tv_threshold, Backend, PhaseDistribution, QpeConfig, QpeProblem};

fn main() -> oscqpe::Result<()> {
    let net = OscillatorNetwork::chain(2, 1.0, 1.0, 1.0)?;
    let problem = QpeProblem::new(EncodedMatrix::from_system(&build_matrices(&net))?)?;
    let m = 4;
    for lambda in [1.0, 3.0] {
        println!("lambda = {lambda}: phase {:.4} of M = {}", phase_of(lambda, problem.bound(), m)?, 1 << m);
    }

    let mut dists = Vec::new();
    for backend in [Backend::Analytic, Backend::Dense, Backend::Circuit] {
        let config = QpeConfig { backend, angle_bits: 8, shots: 2000, seed: 7, ..QpeConfig::new(m, 0) };
        let run = run_qpe(&problem, &config)?;
        println!("{backend:>8}: {} qubits, {} oracle queries per shot", run.qubits, run.queries_per_shot);
        dists.push(run);
    }

    println!("\n  x   analytic      dense    circuit   sampled");
    let sampled = PhaseDistribution::from_samples(&dists[0].samples, m, false);
    for x in 0..1 << m {
        println!(
            "{x:3} {:10.6} {:10.6} {:10.6} {:9.4}",
            dists[0].distribution.probabilities[x],
            dists[1].distribution.probabilities[x],
            dists[2].distribution.probabilities[x],
            sampled.probabilities[x]
        );
    }
    let p = &dists[0].distribution.probabilities;
    println!(
        "\nTV(sampled, exact) = {:.4}, 95% threshold {:.4}",
        total_variation(&sampled.probabilities, p),
        tv_threshold(p, 2000, 0.05)
    );
    Ok(())
}

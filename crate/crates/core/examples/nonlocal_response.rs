//! Cross response `G_uv` from the Hadamard-test variant. The signed products
//! `W_uj W_vj` distinguish modes in which `u` and `v` move together from
//! modes in which they move against each other.
//!
//! ```text
//! cargo run --release --example nonlocal_response
//! ```

use oscqpe::estimator::Tolerances;
use oscqpe::network::OscillatorNetwork;
use oscqpe::pipeline::{run_pipeline, PipelineConfig};

fn main() -> oscqpe::Result<()> {
    let net = OscillatorNetwork::chain(3, 1.0, 1.0, 1.0)?;
    let tol = Tolerances::new(0.05, 0.05, 0.05)?;
    for (u, v) in [(0, 1), (0, 2)] {
        let config = PipelineConfig { v: Some(v), seed: 4, ..PipelineConfig::new(u, tol) };
        let report = run_pipeline(&net, &config)?;
        println!("G_{}{}: m = {}, {} shots", u + 1, v + 1, report.sizing.m_chosen, report.shots);
        for d in report.run.diagnostics.iter().flatten() {
            let sign = match d.weight_true.abs() < tol.delta {
                true => "n/a (no support)",
                false if d.weight_est.signum() == d.weight_true.signum() => "ok",
                false => "WRONG",
            };
            println!("  lambda {:6.3}: W_u W_v = {:+.4} (exact {:+.4}) sign {sign}", d.lambda_est, d.weight_est, d.weight_true);
        }
    }
    Ok(())
}

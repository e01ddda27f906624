//! Local response function of a four-oscillator chain, end to end: size the
//! registers for the requested tolerances, sample phase estimation, read off
//! poles and weights, and compare the rebuilt curve with the exact one.
//!
//! ```text
//! cargo run --release --example response_pipeline
//! ```

use oscqpe::estimator::{error_budget, Tolerances};
use oscqpe::network::OscillatorNetwork;
use oscqpe::pipeline::{run_pipeline, PipelineConfig};

fn main() -> oscqpe::Result<()> {
    let net = OscillatorNetwork::chain(4, 1.0, 1.0, 1.0)?;
    let tol = Tolerances::new(0.05, 0.05, 0.05)?;
    let report = run_pipeline(&net, &PipelineConfig { seed: 1, ..PipelineConfig::new(0, tol) })?;

    let s = &report.sizing;
    println!("m = {} (needs {} for epsilon, {} for the gap), Q = {}, N_S = {}", s.m_chosen, s.m_min1, s.m_min2, s.q, s.n_samples);
    println!("{} oracle queries per shot, {} in total", report.queries_per_shot, report.total_queries);

    println!("\n  lambda~     lambda     W^2~      W^2");
    for d in report.run.diagnostics.iter().flatten() {
        println!("{:8.4} {:10.4} {:8.4} {:8.4}", d.lambda_est, d.lambda_true, d.weight_est, d.weight_true);
    }

    let guard = Default::default();
    let est = report.run.response.evaluate_frequencies(&report.grid, guard)?;
    let exact = report.exact.evaluate_frequencies(&report.grid, guard)?;
    println!("\n omega    |G~|      |G|     budget");
    for k in (0..report.grid.len()).step_by(20) {
        let w = report.grid[k];
        let b = error_budget(&report.run.modes, report.run.response.mass_scale, tol.epsilon, tol.delta, w);
        println!("{w:6.3} {:8.4} {:8.4} {:8.4}", est[k].norm(), exact[k].norm(), b);
    }
    println!("\nmax |G~ - G| = {:.4}, pass = {}", report.comparison.max_abs_error, report.passed());
    Ok(())
}

//! EXIT search on random glued trees. The exact success probability comes
//! from the column subspace; sampled shots follow the measurement model of
//! the search, with post-selection and a degree check.
//!
//! ```text
//! cargo run --release --example glued_trees
//! ```

use oscqpe::gluedtrees::{generate, phase_bits, solve, ColumnSystem, GluedTreesConfig};

fn main() -> oscqpe::Result<()> {
    println!("n_c   vertices   m   gap/estimate   Prob(EXIT)   3/(32 n_c)   n_c Prob");
    for n_c in 2..=12 {
        let cs = ColumnSystem::new(n_c)?;
        let p = cs.exact_exit_probability();
        println!(
            "{n_c:3} {:10} {:3} {:14.3} {:12.5} {:12.5} {:10.4}",
            oscqpe::gluedtrees::vertex_count(n_c),
            phase_bits(n_c, 3),
            cs.exact_gap() / oscqpe::gluedtrees::gap_estimate(n_c),
            p,
            3.0 / (32.0 * n_c as f64),
            n_c as f64 * p
        );
    }

    let inst = generate(5, 42)?;
    let report = solve(&inst, &GluedTreesConfig { shots: 5000, seed: 1, ..GluedTreesConfig::new(5) })?;
    println!(
        "\nn_c = 5, {} shots: {} post-selected, {} hits, empirical {:.4} (95% CI {:.4}..{:.4}), predicted {:.4}",
        report.shots, report.postselected, report.hits, report.empirical_probability, report.wilson_95.0, report.wilson_95.1,
        report.predicted_probability
    );
    println!("exit guess {:?}, true exit {}, found = {}", report.exit_guess, inst.exit, report.exit_found);
    Ok(())
}

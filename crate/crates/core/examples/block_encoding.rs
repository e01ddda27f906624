//! Block encoding of `H` from sparse-access oracles, built gate by gate and
//! as dense matrices, and the spectrum of the resulting walk operator.
//!
//! ```text
//! cargo run --release --example block_encoding
//! ```

use oscqpe::blockenc::{block_error, walk_eigenpairs, CircuitWalk, DenseWalk, EncodedMatrix, WalkRegisters};
use oscqpe::classical::diagonalize;
use oscqpe::network::{build_matrices, OscillatorNetwork};

fn main() -> oscqpe::Result<()> {
    let net = OscillatorNetwork::chain(4, 1.0, 1.0, 1.0)?;
    let sys = build_matrices(&net);
    let enc = EncodedMatrix::from_system(&sys)?;
    println!("4-chain: n = {} system qubits, alpha = 1/{}", enc.qubits(), 1.0 / enc.alpha());

    let dense = DenseWalk::new(&enc)?;
    println!("dense U_H block error:   {:.2e}", block_error(&dense.block(), &enc));

    // the circuit truncates each arccos angle to r bits
    for r in [4, 6, 8, 10, 12] {
        let walk = CircuitWalk::new(enc.clone(), r)?;
        let err = block_error(&walk.block()?, &enc);
        println!("circuit r = {r:2}: error {err:.2e}  (bound {:.2e}, {} qubits)", 2f64.powi(2 - r as i32), WalkRegisters::width(enc.qubits(), r));
    }

    // each eigenvalue of H gives a pair exp(+-i arccos(alpha lambda)) of V
    let modal = diagonalize(&sys)?;
    println!("\n lambda     arccos(alpha lambda)   walk phase     residual");
    for (j, lambda) in modal.eigenvalues.iter().enumerate() {
        let v: Vec<f64> = modal.modes.column(j).iter().cloned().collect();
        let pair = walk_eigenpairs(dense.walk(), enc.qubits(), &v);
        println!(
            "{lambda:8.4}   {:18.12}   {:12.8}   {:.1e}",
            (enc.alpha() * lambda).acos(),
            pair[0].eigenvalue.arg(),
            pair[0].residual.max(pair[1].residual)
        );
    }
    Ok(())
}

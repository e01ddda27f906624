//! The simulator's register arithmetic: modular addition, subtraction with
//! a sign bit, and the inverse QFT that reads out a phase.
//!
//! ```text
//! cargo run --example reversible_arithmetic
//! ```

use std::f64::consts::PI;

use num_complex::Complex64;
use oscqpe::simulator::{RegisterLayout, StateVector};

fn main() -> oscqpe::Result<()> {
    let mut layout = RegisterLayout::new();
    let a = layout.push("a", 3)?;
    let b = layout.push("b", 4)?;
    let mut sv = StateVector::new(layout)?;
    sv.set_basis(a.with_value(b.with_value(0, 2), 5))?;
    sv.add_into(&a, &b, &[])?;
    let after_add = sv.probabilities(&b).iter().position(|&p| p > 0.5).unwrap_or(0);
    sv.sub_from(&a, &b, &[])?;
    sv.sub_from(&a, &b, &[])?;
    let after_sub = sv.probabilities(&b).iter().position(|&p| p > 0.5).unwrap_or(0);
    // 2 - 5 wraps to 13 in four bits: the top bit flags the negative result
    println!("b = 2; b += 5 -> {after_add}; b -= 5 twice -> {after_sub} (sign bit {})", after_sub >> 3);

    // a phase 2 pi k / M written into the register is read back exactly
    let mut layout = RegisterLayout::new();
    let phase = layout.push("phase", 5)?;
    let m = 1usize << 5;
    let k = 11.0;
    let amps: Vec<Complex64> =
        (0..m).map(|x| Complex64::from_polar(1.0 / (m as f64).sqrt(), 2.0 * PI * k * x as f64 / m as f64)).collect();
    let mut sv = StateVector::from_amplitudes(layout, amps)?;
    sv.inverse_qft(&phase)?;
    let p = sv.probabilities(&phase);
    println!("inverse QFT of phase {k}/{m}: P(11) = {:.12}", p[11]);
    Ok(())
}

//! A small statevector engine with named registers.
//!
//! Qubit `q` is bit `q` of the amplitude index. A register is a contiguous run
//! of qubits read little-endian, so its value is `(index >> start) & mask`.
//! Besides the usual single-qubit gates the engine offers a few native
//! reversible operations (modular add, classical XOR oracles, multiplexed
//! unitaries) that stand in for the arithmetic circuits an actual device
//! would compile them into.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};

/// Largest register file simulated unless `OSCQPE_MAX_QUBITS` says otherwise.
pub const DEFAULT_MAX_QUBITS: usize = 24;

const NORM_TOL: f64 = 1e-12;

/// Qubit limit in force, honouring the `OSCQPE_MAX_QUBITS` override.
pub fn max_qubits() -> usize {
    std::env::var("OSCQPE_MAX_QUBITS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_QUBITS)
}

/// Fails with [`Error::Infeasible`] when `required` exceeds the limit.
pub fn check_qubit_budget(required: usize) -> Result<()> {
    let limit = max_qubits();
    if required > limit {
        return Err(Error::Infeasible { required, limit });
    }
    Ok(())
}

/// A named, contiguous block of qubits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Register {
    pub name: String,
    pub start: usize,
    pub width: usize,
}

impl Register {
    pub fn qubits(&self) -> Range<usize> {
        self.start..self.start + self.width
    }

    /// Qubit holding bit `k` (bit 0 is least significant).
    pub fn qubit(&self, k: usize) -> usize {
        assert!(k < self.width, "bit {k} outside register {}", self.name);
        self.start + k
    }

    pub fn mask(&self) -> usize {
        ((1usize << self.width) - 1) << self.start
    }

    pub fn dim(&self) -> usize {
        1 << self.width
    }

    #[inline]
    pub fn value_of(&self, index: usize) -> usize {
        (index >> self.start) & ((1usize << self.width) - 1)
    }

    #[inline]
    pub fn with_value(&self, index: usize, value: usize) -> usize {
        (index & !self.mask()) | ((value << self.start) & self.mask())
    }

    fn overlaps(&self, other: &Register) -> bool {
        self.start < other.start + other.width && other.start < self.start + self.width
    }
}

/// Ordered collection of registers covering qubits `0..total`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegisterLayout {
    registers: Vec<Register>,
    total: usize,
}

impl RegisterLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a register of `width` qubits. Zero-width registers are allowed
    /// and simply occupy nothing.
    pub fn push(&mut self, name: &str, width: usize) -> Result<Register> {
        if self.registers.iter().any(|r| r.name == name) {
            return Err(Error::Register(format!("duplicate register name `{name}`")));
        }
        let reg = Register { name: name.to_string(), start: self.total, width };
        self.total += width;
        self.registers.push(reg.clone());
        Ok(reg)
    }

    pub fn get(&self, name: &str) -> Result<&Register> {
        self.registers
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Register(format!("no register named `{name}`")))
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn total_qubits(&self) -> usize {
        self.total
    }
}

/// Single-qubit gates. `Ry(t)` is `exp(-i t Y / 2)` and `Phase(t)` is
/// `diag(1, e^{i t})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    X,
    Y,
    Z,
    H,
    S,
    Sdg,
    Ry(f64),
    Phase(f64),
}

impl Gate {
    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Gate::X => [[c(0., 0.), c(1., 0.)], [c(1., 0.), c(0., 0.)]],
            Gate::Y => [[c(0., 0.), c(0., -1.)], [c(0., 1.), c(0., 0.)]],
            Gate::Z => [[c(1., 0.), c(0., 0.)], [c(0., 0.), c(-1., 0.)]],
            Gate::H => [[c(h, 0.), c(h, 0.)], [c(h, 0.), c(-h, 0.)]],
            Gate::S => [[c(1., 0.), c(0., 0.)], [c(0., 0.), c(0., 1.)]],
            Gate::Sdg => [[c(1., 0.), c(0., 0.)], [c(0., 0.), c(0., -1.)]],
            Gate::Ry(t) => {
                let (s, co) = (t / 2.0).sin_cos();
                [[c(co, 0.), c(-s, 0.)], [c(s, 0.), c(co, 0.)]]
            }
            Gate::Phase(t) => [[c(1., 0.), c(0., 0.)], [c(0., 0.), Complex64::from_polar(1.0, t)]],
        }
    }

    pub fn inverse(self) -> Gate {
        match self {
            Gate::S => Gate::Sdg,
            Gate::Sdg => Gate::S,
            Gate::Ry(t) => Gate::Ry(-t),
            Gate::Phase(t) => Gate::Phase(-t),
            g => g,
        }
    }

    fn is_diagonal(self) -> bool {
        matches!(self, Gate::Z | Gate::S | Gate::Sdg | Gate::Phase(_))
    }
}

/// A control qubit that fires when it reads `value`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Control {
    pub qubit: usize,
    pub value: bool,
}

impl Control {
    pub fn on(qubit: usize) -> Self {
        Control { qubit, value: true }
    }

    pub fn off(qubit: usize) -> Self {
        Control { qubit, value: false }
    }
}

/// Controls that fire when `reg` holds `value`.
pub fn controls_for_value(reg: &Register, value: usize) -> Vec<Control> {
    (0..reg.width)
        .map(|k| Control { qubit: reg.qubit(k), value: (value >> k) & 1 == 1 })
        .collect()
}

#[derive(Clone, Copy)]
struct ControlMask {
    mask: usize,
    value: usize,
}

impl ControlMask {
    #[inline]
    fn fires(self, index: usize) -> bool {
        index & self.mask == self.value
    }
}

/// Statevector over a [`RegisterLayout`].
#[derive(Clone, Debug)]
pub struct StateVector {
    amps: Vec<Complex64>,
    layout: RegisterLayout,
    norm_check: bool,
}

impl StateVector {
    /// All-zeros state. Refuses layouts larger than [`max_qubits`].
    pub fn new(layout: RegisterLayout) -> Result<Self> {
        check_qubit_budget(layout.total_qubits())?;
        let mut amps = vec![Complex64::new(0.0, 0.0); 1usize << layout.total_qubits()];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector { amps, layout, norm_check: cfg!(debug_assertions) })
    }

    /// State with the given amplitudes, which must be normalised.
    pub fn from_amplitudes(layout: RegisterLayout, amps: Vec<Complex64>) -> Result<Self> {
        check_qubit_budget(layout.total_qubits())?;
        if amps.len() != 1usize << layout.total_qubits() {
            return Err(Error::Dimension(format!(
                "{} amplitudes for {} qubits",
                amps.len(),
                layout.total_qubits()
            )));
        }
        let sv = StateVector { amps, layout, norm_check: cfg!(debug_assertions) };
        sv.verify_norm()?;
        Ok(sv)
    }

    /// Toggles the per-operation norm check (on by default in debug builds).
    pub fn set_norm_check(&mut self, on: bool) {
        self.norm_check = on;
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn register(&self, name: &str) -> Result<Register> {
        self.layout.get(name).cloned()
    }

    pub fn num_qubits(&self) -> usize {
        self.layout.total_qubits()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        // four independent accumulators let the loop vectorise
        let mut acc = [0.0f64; 4];
        let chunks = self.amps.chunks_exact(4);
        let tail: f64 = chunks.remainder().iter().map(|a| a.norm_sqr()).sum();
        for c in chunks {
            for k in 0..4 {
                acc[k] += c[k].re * c[k].re + c[k].im * c[k].im;
            }
        }
        (acc.iter().sum::<f64>() + tail).sqrt()
    }

    /// Resets to the computational basis state `index`.
    pub fn set_basis(&mut self, index: usize) -> Result<()> {
        if index >= self.amps.len() {
            return Err(Error::QubitIndex(format!("basis index {index} out of range")));
        }
        self.amps.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        self.amps[index] = Complex64::new(1.0, 0.0);
        Ok(())
    }

    fn verify_norm(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(Error::NotIsometry(format!("state norm drifted to 1 + {:e}", n - 1.0)));
        }
        Ok(())
    }

    fn after_op(&self) -> Result<()> {
        if self.norm_check {
            self.verify_norm()?;
        }
        Ok(())
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.num_qubits() {
            return Err(Error::QubitIndex(format!("qubit {q} out of range ({} qubits)", self.num_qubits())));
        }
        Ok(())
    }

    fn control_mask(&self, controls: &[Control], used: usize) -> Result<ControlMask> {
        let mut mask = 0usize;
        let mut value = 0usize;
        for c in controls {
            self.check_qubit(c.qubit)?;
            let bit = 1usize << c.qubit;
            if (mask | used) & bit != 0 {
                return Err(Error::QubitIndex(format!("qubit {} used twice", c.qubit)));
            }
            mask |= bit;
            if c.value {
                value |= bit;
            }
        }
        Ok(ControlMask { mask, value })
    }

    /// Applies `gate` to `target` when every control fires.
    pub fn apply_gate(&mut self, gate: Gate, target: usize, controls: &[Control]) -> Result<()> {
        self.check_qubit(target)?;
        let tbit = 1usize << target;
        let cm = self.control_mask(controls, tbit)?;
        let [[m00, m01], [m10, m11]] = gate.matrix();
        let dim = self.amps.len();
        if gate.is_diagonal() {
            for i in 0..dim {
                if cm.fires(i) {
                    let f = if i & tbit == 0 { m00 } else { m11 };
                    self.amps[i] *= f;
                }
            }
        } else {
            let mut base = 0;
            while base < dim {
                for i0 in base..base + tbit {
                    if cm.fires(i0) {
                        let i1 = i0 | tbit;
                        let (a0, a1) = (self.amps[i0], self.amps[i1]);
                        self.amps[i0] = m00 * a0 + m01 * a1;
                        self.amps[i1] = m10 * a0 + m11 * a1;
                    }
                }
                base += 2 * tbit;
            }
        }
        self.after_op()
    }

    /// `Ry(unit * value(reg))` on `target`. Equal to the ladder of
    /// `Ry(unit * 2^b)` gates on `target` controlled by bit `b` of `reg`
    /// (they commute), done in one pass.
    pub fn apply_ry_by_register(&mut self, target: usize, reg: &Register, unit: f64, controls: &[Control]) -> Result<()> {
        self.check_qubit(target)?;
        self.check_register(reg)?;
        let tbit = 1usize << target;
        if reg.mask() & tbit != 0 {
            return Err(Error::QubitIndex(format!("target {target} inside register `{}`", reg.name)));
        }
        let cm = self.controls_outside(controls, &[reg])?;
        if cm.mask & tbit != 0 {
            return Err(Error::QubitIndex(format!("qubit {target} used twice")));
        }
        let rot: Vec<(f64, f64)> = (0..reg.dim()).map(|k| (unit * k as f64 / 2.0).sin_cos()).collect();
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for i0 in base..base + tbit {
                if cm.fires(i0) {
                    let (s, c) = rot[reg.value_of(i0)];
                    let i1 = i0 | tbit;
                    let (a0, a1) = (self.amps[i0], self.amps[i1]);
                    self.amps[i0] = a0 * c - a1 * s;
                    self.amps[i1] = a0 * s + a1 * c;
                }
            }
            base += 2 * tbit;
        }
        self.after_op()
    }

    /// Negates every amplitude on which all controls fire. With controls
    /// `[c, t]` this is the controlled-Z.
    pub fn apply_phase_flip(&mut self, controls: &[Control]) -> Result<()> {
        let cm = self.control_mask(controls, 0)?;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if cm.fires(i) {
                *a = -*a;
            }
        }
        self.after_op()
    }

    /// The same phase flip built from Toffoli gates: the conjunction of the
    /// controls is accumulated in `work` ancillas (which must start in |0>),
    /// flipped with a controlled-Z, then uncomputed. Needs
    /// `controls.len() - 2` work qubits.
    pub fn apply_phase_flip_ladder(&mut self, controls: &[Control], work: &[usize]) -> Result<()> {
        let k = controls.len();
        if k <= 2 {
            return self.apply_phase_flip(controls);
        }
        let need = k - 2;
        if work.len() < need {
            return Err(Error::Register(format!("ladder needs {need} work qubits, got {}", work.len())));
        }
        let work = &work[..need];
        for &w in work {
            if controls.iter().any(|c| c.qubit == w) {
                return Err(Error::QubitIndex(format!("work qubit {w} is also a control")));
            }
        }
        let mut steps = Vec::with_capacity(need);
        steps.push((work[0], vec![controls[0], controls[1]]));
        for j in 1..need {
            steps.push((work[j], vec![Control::on(work[j - 1]), controls[j + 1]]));
        }
        for (t, cs) in &steps {
            self.apply_gate(Gate::X, *t, cs)?;
        }
        self.apply_phase_flip(&[Control::on(work[need - 1]), controls[k - 1]])?;
        for (t, cs) in steps.iter().rev() {
            self.apply_gate(Gate::X, *t, cs)?;
        }
        let mask = work.iter().fold(0usize, |m, &w| m | (1 << w));
        let leak: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        if leak > 1e-20 {
            return Err(Error::AncillaNotRestored(leak));
        }
        Ok(())
    }

    /// Swaps qubits `a` and `b` when every control fires.
    pub fn apply_swap(&mut self, a: usize, b: usize, controls: &[Control]) -> Result<()> {
        self.check_qubit(a)?;
        self.check_qubit(b)?;
        if a == b {
            return Err(Error::QubitIndex(format!("swap of qubit {a} with itself")));
        }
        let (ba, bb) = (1usize << a, 1usize << b);
        let cm = self.control_mask(controls, ba | bb)?;
        for i in 0..self.amps.len() {
            if i & ba != 0 && i & bb == 0 && cm.fires(i) {
                self.amps.swap(i, i ^ ba ^ bb);
            }
        }
        self.after_op()
    }

    fn check_register(&self, reg: &Register) -> Result<()> {
        if reg.start + reg.width > self.num_qubits() {
            return Err(Error::Register(format!("register `{}` exceeds the layout", reg.name)));
        }
        Ok(())
    }

    fn controls_outside(&self, controls: &[Control], regs: &[&Register]) -> Result<ControlMask> {
        let used = regs.iter().fold(0usize, |m, r| m | r.mask());
        self.control_mask(controls, used)
    }

    fn add_impl(&mut self, src: &Register, dst: &Register, controls: &[Control], subtract: bool) -> Result<()> {
        self.check_register(src)?;
        self.check_register(dst)?;
        if src.overlaps(dst) {
            return Err(Error::Register(format!("registers `{}` and `{}` overlap", src.name, dst.name)));
        }
        if dst.width < src.width {
            return Err(Error::Register(format!(
                "destination `{}` ({} qubits) narrower than source `{}` ({} qubits)",
                dst.name, dst.width, src.name, src.width
            )));
        }
        let cm = self.controls_outside(controls, &[src, dst])?;
        let d = dst.dim();
        let stride = 1usize << dst.start;
        let mut buf = vec![Complex64::new(0.0, 0.0); d];
        for base in bases(self.amps.len(), dst) {
            if !cm.fires(base) {
                continue;
            }
            let a = src.value_of(base) % d;
            let shift = if subtract { (d - a) % d } else { a };
            if shift == 0 {
                continue;
            }
            for (k, b) in buf.iter_mut().enumerate() {
                *b = self.amps[base + k * stride];
            }
            for (k, b) in buf.iter().enumerate() {
                self.amps[base + ((k + shift) & (d - 1)) * stride] = *b;
            }
        }
        self.after_op()
    }

    /// `|a>|b> -> |a>|b + a mod 2^w>` with `w` the destination width.
    pub fn add_into(&mut self, src: &Register, dst: &Register, controls: &[Control]) -> Result<()> {
        self.add_impl(src, dst, controls, false)
    }

    /// Inverse of [`add_into`](Self::add_into).
    pub fn sub_from(&mut self, src: &Register, dst: &Register, controls: &[Control]) -> Result<()> {
        self.add_impl(src, dst, controls, true)
    }

    /// Classical oracle `|x>|y> -> |x>|y xor f(x)>`. The key `x` concatenates
    /// the `inputs` registers, first register in the low bits, and indexes
    /// `table`; the output is split over `outputs` the same way. Self-inverse.
    pub fn apply_xor_table(&mut self, inputs: &[&Register], outputs: &[&Register], table: &[usize]) -> Result<()> {
        let mut all: Vec<&Register> = inputs.to_vec();
        all.extend_from_slice(outputs);
        for (i, a) in all.iter().enumerate() {
            self.check_register(a)?;
            for b in &all[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::Register(format!("registers `{}` and `{}` overlap", a.name, b.name)));
                }
            }
        }
        let key_width: usize = inputs.iter().map(|r| r.width).sum();
        if table.len() != 1 << key_width {
            return Err(Error::Dimension(format!("oracle table has {} entries, expected {}", table.len(), 1usize << key_width)));
        }
        let out_width: usize = outputs.iter().map(|r| r.width).sum();
        if table.iter().any(|&t| t >> out_width != 0) {
            return Err(Error::Dimension("oracle value wider than its output registers".into()));
        }
        let ins: Vec<(usize, usize)> = inputs.iter().map(|r| (r.start, (1usize << r.width) - 1)).collect();
        let mut flip_of = Vec::with_capacity(table.len());
        for &t in table {
            let mut flip = 0usize;
            let mut shift = 0;
            for r in outputs {
                flip |= ((t >> shift) & ((1usize << r.width) - 1)) << r.start;
                shift += r.width;
            }
            flip_of.push(flip);
        }
        let key_of = |i: usize| {
            let mut key = 0usize;
            let mut shift = 0;
            for &(start, mask) in &ins {
                key |= ((i >> start) & mask) << shift;
                shift += mask.count_ones() as usize;
            }
            key
        };
        let contiguous = outputs.windows(2).all(|w| w[0].start + w[0].width == w[1].start);
        if contiguous && !outputs.is_empty() {
            // walk each output block once: the key is fixed within a block
            let out = Register { name: String::new(), start: outputs[0].start, width: out_width };
            let stride = 1usize << out.start;
            for base in bases(self.amps.len(), &out) {
                let f = table[key_of(base)];
                if f == 0 {
                    continue;
                }
                for y in 0..out.dim() {
                    let z = y ^ f;
                    if z > y {
                        self.amps.swap(base + y * stride, base + z * stride);
                    }
                }
            }
        } else {
            for i in 0..self.amps.len() {
                let j = i ^ flip_of[key_of(i)];
                if j > i {
                    self.amps.swap(i, j);
                }
            }
        }
        self.after_op()
    }

    /// Applies `matrix` (dimension `2^target.width`) to `target`, with the
    /// register value as the matrix index, when every control fires.
    pub fn apply_unitary(&mut self, target: &Register, matrix: &DMatrix<Complex64>, controls: &[Control]) -> Result<()> {
        self.apply_multiplexed(target, std::slice::from_ref(matrix), None, controls)
    }

    /// Applies `unitaries[s]` to `target` on the branch where `select` holds
    /// `s`. With `select = None` the single matrix is applied everywhere.
    pub fn apply_multiplexed(
        &mut self,
        target: &Register,
        unitaries: &[DMatrix<Complex64>],
        select: Option<&Register>,
        controls: &[Control],
    ) -> Result<()> {
        self.check_register(target)?;
        let d = target.dim();
        let expected = select.map_or(1, |s| s.dim());
        if unitaries.len() != expected {
            return Err(Error::Dimension(format!("{} unitaries for {} select values", unitaries.len(), expected)));
        }
        if unitaries.iter().any(|u| u.nrows() != d || u.ncols() != d) {
            return Err(Error::Dimension(format!("multiplexed blocks must be {d}x{d}")));
        }
        let mut regs = vec![target];
        if let Some(s) = select {
            self.check_register(s)?;
            if s.overlaps(target) {
                return Err(Error::Register("select and target registers overlap".into()));
            }
            regs.push(s);
        }
        let cm = self.controls_outside(controls, &regs)?;
        let offsets: Vec<usize> = (0..d).map(|k| k << target.start).collect();
        // row-major copies for a tight inner loop
        let flat: Vec<Vec<Complex64>> = unitaries.iter().map(|u| u.transpose().iter().copied().collect()).collect();
        let mut buf = vec![Complex64::new(0.0, 0.0); d];
        for base in bases(self.amps.len(), target) {
            if !cm.fires(base) {
                continue;
            }
            let u = &flat[select.map_or(0, |s| s.value_of(base))];
            for (b, off) in buf.iter_mut().zip(&offsets) {
                *b = self.amps[base | off];
            }
            for (row, off) in offsets.iter().enumerate() {
                let r = &u[row * d..(row + 1) * d];
                let acc = r.iter().zip(&buf).fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x * y);
                self.amps[base | off] = acc;
            }
        }
        self.after_op()
    }

    /// Quantum Fourier transform as a gate sequence:
    /// `|x> -> M^{-1/2} sum_y e^{2 pi i x y / M} |y>`.
    pub fn qft(&mut self, reg: &Register) -> Result<()> {
        for (gate, target, controls) in qft_gates(reg) {
            self.apply_gate(gate, target, &controls)?;
        }
        Ok(())
    }

    /// Inverse QFT as the reversed, conjugated gate sequence.
    pub fn inverse_qft(&mut self, reg: &Register) -> Result<()> {
        for (gate, target, controls) in qft_gates(reg).into_iter().rev() {
            self.apply_gate(gate.inverse(), target, &controls)?;
        }
        Ok(())
    }

    /// Inverse QFT applied as a dense matrix.
    pub fn inverse_qft_direct(&mut self, reg: &Register) -> Result<()> {
        let f = dft_matrix(reg.width, -1.0);
        self.apply_unitary(reg, &f, &[])
    }

    /// Marginal distribution of `reg`.
    pub fn probabilities(&self, reg: &Register) -> Vec<f64> {
        self.joint_probabilities(&[reg])
    }

    /// Joint marginal of several registers, keyed by their concatenated
    /// value with the first register in the low bits.
    pub fn joint_probabilities(&self, regs: &[&Register]) -> Vec<f64> {
        let width: usize = regs.iter().map(|r| r.width).sum();
        let mut p = vec![0.0; 1 << width];
        for (i, a) in self.amps.iter().enumerate() {
            let mut key = 0usize;
            let mut shift = 0;
            for r in regs {
                key |= r.value_of(i) << shift;
                shift += r.width;
            }
            p[key] += a.norm_sqr();
        }
        p
    }

    /// Probability that `reg` reads anything other than `value`.
    pub fn population_outside(&self, reg: &Register, value: usize) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| reg.value_of(*i) != value)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Projects `reg` onto `value` and renormalises. Returns the probability
    /// of that outcome; fails if it is zero.
    pub fn postselect(&mut self, reg: &Register, value: usize) -> Result<f64> {
        let p: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| reg.value_of(*i) == value)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        if p <= 0.0 {
            return Err(Error::Quality(format!("post-selection of `{}` = {value} has zero probability", reg.name)));
        }
        let scale = 1.0 / p.sqrt();
        for (i, a) in self.amps.iter_mut().enumerate() {
            if reg.value_of(i) == value {
                *a *= scale;
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        Ok(p)
    }

    /// Born-rule measurement of `reg`; the state collapses onto the outcome.
    pub fn measure<R: Rng + ?Sized>(&mut self, reg: &Register, rng: &mut R) -> Result<usize> {
        let p = self.probabilities(reg);
        let outcome = sample_index(&p, rng)?;
        self.postselect(reg, outcome)?;
        Ok(outcome)
    }
}

/// Indices in `0..len` whose `reg` bits are all zero, in increasing order.
fn bases(len: usize, reg: &Register) -> impl Iterator<Item = usize> {
    let low = 1usize << reg.start;
    let high_shift = reg.start + reg.width;
    (0..len >> high_shift).flat_map(move |h| (0..low).map(move |l| (h << high_shift) | l))
}

/// Draws an index from a (not necessarily normalised) weight vector.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(weights.iter().map(|w| w.max(0.0)))
        .map_err(|e| Error::Argument(format!("cannot sample: {e}")))?;
    Ok(dist.sample(rng))
}

fn qft_gates(reg: &Register) -> Vec<(Gate, usize, Vec<Control>)> {
    let m = reg.width;
    let mut gates = Vec::new();
    for a in (0..m).rev() {
        gates.push((Gate::H, reg.qubit(a), vec![]));
        for b in (0..a).rev() {
            let angle = PI / (1u64 << (a - b)) as f64;
            gates.push((Gate::Phase(angle), reg.qubit(a), vec![Control::on(reg.qubit(b))]));
        }
    }
    // bit reversal, written with three CNOTs per pair so the inverse is the
    // plain reversed sequence
    for k in 0..m / 2 {
        let (p, q) = (reg.qubit(k), reg.qubit(m - 1 - k));
        gates.push((Gate::X, q, vec![Control::on(p)]));
        gates.push((Gate::X, p, vec![Control::on(q)]));
        gates.push((Gate::X, q, vec![Control::on(p)]));
    }
    gates
}

/// `F[y][x] = e^{sign 2 pi i x y / M} / sqrt(M)` for a `width`-qubit register.
pub fn dft_matrix(width: usize, sign: f64) -> DMatrix<Complex64> {
    let m = 1usize << width;
    let norm = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, m, |y, x| {
        let k = (x * y) % m;
        Complex64::from_polar(norm, sign * 2.0 * PI * k as f64 / m as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn layout(widths: &[(&str, usize)]) -> RegisterLayout {
        let mut l = RegisterLayout::new();
        for (n, w) in widths {
            l.push(n, *w).unwrap();
        }
        l
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn basic_gates() {
        let mut sv = StateVector::new(layout(&[("q", 1)])).unwrap();
        sv.apply_gate(Gate::X, 0, &[]).unwrap();
        assert!(close(sv.amplitudes()[1], Complex64::new(1.0, 0.0), 1e-15));

        let mut sv = StateVector::new(layout(&[("q", 3)])).unwrap();
        sv.apply_gate(Gate::Ry(0.7), 1, &[]).unwrap();
        sv.apply_gate(Gate::H, 2, &[Control::on(1)]).unwrap();
        let before = sv.amplitudes().to_vec();
        sv.apply_gate(Gate::H, 0, &[]).unwrap();
        sv.apply_gate(Gate::H, 0, &[]).unwrap();
        for (a, b) in sv.amplitudes().iter().zip(&before) {
            assert!(close(*a, *b, 1e-14));
        }
    }

    #[test]
    fn controlled_ry() {
        let mut sv = StateVector::new(layout(&[("t", 1), ("c", 1)])).unwrap();
        sv.apply_gate(Gate::X, 1, &[]).unwrap();
        sv.apply_gate(Gate::Ry(PI / 2.0), 0, &[Control::on(1)]).unwrap();
        let c = (PI / 4.0).cos();
        assert!(close(sv.amplitudes()[0b10], Complex64::new(c, 0.0), 1e-15));
        assert!(close(sv.amplitudes()[0b11], Complex64::new((PI / 4.0).sin(), 0.0), 1e-15));
        // open control leaves the |1> branch alone
        sv.apply_gate(Gate::X, 0, &[Control::off(1)]).unwrap();
        assert!(close(sv.amplitudes()[0b10], Complex64::new(c, 0.0), 1e-15));
    }

    #[test]
    fn index_collisions_rejected() {
        let mut sv = StateVector::new(layout(&[("q", 2)])).unwrap();
        assert!(matches!(sv.apply_gate(Gate::X, 0, &[Control::on(0)]), Err(Error::QubitIndex(_))));
        assert!(matches!(sv.apply_gate(Gate::X, 5, &[]), Err(Error::QubitIndex(_))));
        assert!(matches!(sv.apply_swap(1, 1, &[]), Err(Error::QubitIndex(_))));
        let l = sv.layout().clone();
        let q = l.get("q").unwrap();
        assert!(matches!(sv.add_into(q, q, &[]), Err(Error::Register(_))));
    }

    #[test]
    fn qubit_guard() {
        assert!(check_qubit_budget(DEFAULT_MAX_QUBITS).is_ok() || max_qubits() < DEFAULT_MAX_QUBITS);
        let big = layout(&[("q", max_qubits() + 1)]);
        assert!(matches!(StateVector::new(big), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn modular_add() {
        let l = layout(&[("a", 3), ("b", 3)]);
        let (a, b) = (l.get("a").unwrap().clone(), l.get("b").unwrap().clone());
        let mut sv = StateVector::new(l).unwrap();
        sv.set_basis(3 | (5 << 3)).unwrap();
        sv.add_into(&a, &b, &[]).unwrap();
        assert!(close(sv.amplitudes()[3], Complex64::new(1.0, 0.0), 1e-15));
    }

    #[test]
    fn subtraction_sign_bit() {
        // u - v in an (n+1)-wide register: the top bit flags v > u
        let l = layout(&[("v", 3), ("u", 4)]);
        let (v, u) = (l.get("v").unwrap().clone(), l.get("u").unwrap().clone());
        let mut sv = StateVector::new(l).unwrap();
        sv.set_basis(5 | (2 << 3)).unwrap();
        sv.sub_from(&v, &u, &[]).unwrap();
        let idx = sv.amplitudes().iter().position(|a| a.norm() > 0.5).unwrap();
        let diff = u.value_of(idx);
        assert_eq!(diff, (2 + 16 - 5) % 16);
        assert_eq!(diff >> 3, 1);
    }

    #[test]
    fn add_is_a_permutation() {
        let l = layout(&[("a", 3), ("b", 4), ("c", 1)]);
        let (a, b) = (l.get("a").unwrap().clone(), l.get("b").unwrap().clone());
        let dim = 1 << 8;
        let mut seen = vec![false; dim];
        for i in 0..dim {
            let mut sv = StateVector::new(l.clone()).unwrap();
            sv.set_basis(i).unwrap();
            sv.add_into(&a, &b, &[Control::on(7)]).unwrap();
            let hits: Vec<usize> = (0..dim).filter(|&j| sv.amplitudes()[j].norm() > 0.0).collect();
            assert_eq!(hits.len(), 1);
            assert!(!seen[hits[0]]);
            seen[hits[0]] = true;
            if i >> 7 == 0 {
                assert_eq!(hits[0], i);
            }
        }
    }

    proptest! {
        #[test]
        fn sub_undoes_add(x in 0usize..(1 << 7)) {
            let l = layout(&[("a", 3), ("b", 4)]);
            let (a, b) = (l.get("a").unwrap().clone(), l.get("b").unwrap().clone());
            let mut sv = StateVector::new(l).unwrap();
            sv.set_basis(x).unwrap();
            sv.add_into(&a, &b, &[]).unwrap();
            sv.sub_from(&a, &b, &[]).unwrap();
            prop_assert!((sv.amplitudes()[x].re - 1.0).abs() < 1e-15);
        }
    }

    fn random_state(l: RegisterLayout, seed: u64) -> StateVector {
        let mut rng = stream_rng(seed, 0);
        let dim = 1 << l.total_qubits();
        let mut v: Vec<Complex64> = (0..dim).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let n = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        StateVector::from_amplitudes(l, v).unwrap()
    }

    #[test]
    fn qft_sequence_matches_dense() {
        for m in 1..=6 {
            let l = layout(&[("x", 1), ("p", m)]);
            let p = l.get("p").unwrap().clone();
            let mut a = random_state(l.clone(), m as u64);
            let mut b = a.clone();
            a.inverse_qft(&p).unwrap();
            b.inverse_qft_direct(&p).unwrap();
            for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
                assert!(close(*x, *y, 1e-10), "m = {m}");
            }
            let mut c = random_state(l, 99);
            let orig = c.amplitudes().to_vec();
            c.qft(&p).unwrap();
            c.inverse_qft(&p).unwrap();
            for (x, y) in c.amplitudes().iter().zip(&orig) {
                assert!(close(*x, *y, 1e-12));
            }
        }
    }

    #[test]
    fn inverse_qft_examples() {
        let l = layout(&[("p", 3)]);
        let p = l.get("p").unwrap().clone();
        let mut sv = StateVector::new(l).unwrap();
        for q in 0..3 {
            sv.apply_gate(Gate::H, q, &[]).unwrap();
        }
        sv.inverse_qft(&p).unwrap();
        assert!((sv.amplitudes()[0].norm() - 1.0).abs() < 1e-12);

        // kickback state for phase 1/4 on two qubits reads out x = 1
        let l = layout(&[("p", 2)]);
        let p = l.get("p").unwrap().clone();
        let amps = (0..4).map(|z| Complex64::from_polar(0.5, 2.0 * PI * 0.25 * z as f64)).collect();
        let mut sv = StateVector::from_amplitudes(l, amps).unwrap();
        sv.inverse_qft(&p).unwrap();
        assert!((sv.probabilities(&p)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measurement() {
        let l = layout(&[("q", 2)]);
        let q = l.get("q").unwrap().clone();
        let mut sv = StateVector::new(l.clone()).unwrap();
        let mut rng = stream_rng(1, 0);
        assert_eq!(sv.measure(&q, &mut rng).unwrap(), 0);

        let bit = Register { name: "b".into(), start: 0, width: 1 };
        let mut ones = 0usize;
        let shots = 100_000;
        let mut plus = StateVector::new(l).unwrap();
        plus.apply_gate(Gate::H, 0, &[]).unwrap();
        for _ in 0..shots {
            let mut s = plus.clone();
            ones += s.measure(&bit, &mut rng).unwrap();
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
        let sigma = (shots as f64 * 0.25).sqrt();
        assert!((ones as f64 - shots as f64 / 2.0).abs() < 5.0 * sigma);
    }

    #[test]
    fn ladder_matches_native_phase_flip() {
        let l = layout(&[("c", 4), ("w", 3)]);
        let controls = [Control::on(0), Control::off(1), Control::on(2), Control::off(3)];
        let base = {
            let mut s = StateVector::new(l.clone()).unwrap();
            for q in 0..4 {
                s.apply_gate(Gate::Ry(0.3 + q as f64), q, &[]).unwrap();
            }
            s
        };
        let mut a = base.clone();
        let mut b = base;
        a.apply_phase_flip(&controls).unwrap();
        b.apply_phase_flip_ladder(&controls, &[4, 5]).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!(close(*x, *y, 1e-14));
        }
        assert!(matches!(b.apply_phase_flip_ladder(&controls, &[4]), Err(Error::Register(_))));
    }

    #[test]
    fn fused_rotation_matches_ladder() {
        let l = layout(&[("t", 1), ("k", 4), ("c", 1)]);
        let k = l.get("k").unwrap().clone();
        let mut a = random_state(l, 11);
        let mut b = a.clone();
        let unit = PI / 16.0;
        a.apply_ry_by_register(0, &k, unit, &[Control::on(5)]).unwrap();
        for bit in 0..4 {
            b.apply_gate(Gate::Ry(unit * (1 << bit) as f64), 0, &[Control::on(k.qubit(bit)), Control::on(5)]).unwrap();
        }
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!(close(*x, *y, 1e-14));
        }
    }

    #[test]
    fn xor_table_is_involution() {
        let l = layout(&[("x", 2), ("y", 3), ("z", 1)]);
        let (x, y, z) = (l.get("x").unwrap().clone(), l.get("y").unwrap().clone(), l.get("z").unwrap().clone());
        let mut sv = random_state(l, 5);
        let orig = sv.amplitudes().to_vec();
        let table = [0b0001, 0b1010, 0b0111, 0b1100];
        sv.apply_xor_table(&[&x], &[&y, &z], &table).unwrap();
        assert!(close(sv.amplitudes()[0b1 | (0b101 << 2)], orig[0b1 | (0b111 << 2) | (1 << 5)], 1e-15));
        sv.apply_xor_table(&[&x], &[&y, &z], &table).unwrap();
        for (a, b) in sv.amplitudes().iter().zip(&orig) {
            assert!(close(*a, *b, 1e-15));
        }
    }
}

//! Oracle-based block encoding of a sparse symmetric matrix and the
//! qubitized walk operator built from it.
//!
//! Two interchangeable backends are provided. [`CircuitWalk`] acts on a
//! [`StateVector`] gate by gate with an `r`-bit angle register, while
//! [`DenseWalk`] builds the same unitaries as explicit matrices from exact
//! amplitudes and serves as the `r = infinity` reference.
//!
//! Both use the qubit order `flag, v (n), extra, u (n)` on the system part,
//! so a dense index is `flag + 2 v + 2^{n+1} extra + 2^{n+2} u`. The block
//! ancilla is `flag, v, extra` (`n + 2` qubits) and the swap exchanges the
//! `(flag, v)` half with the `(extra, u)` half.

use std::cell::Cell;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{pad_columns, SystemMatrices};
use crate::simulator::{Control, Register, RegisterLayout, StateVector};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A symmetric matrix prepared for sparse-access block encoding.
///
/// The matrix is padded to `2^n` rows. Padding rows get a diagonal entry of
/// `max_norm`, so the encoding constant is unchanged and the extra
/// eigenvalues never carry weight at a physical vertex.
#[derive(Debug, Clone)]
pub struct EncodedMatrix {
    matrix: DMatrix<f64>,
    logical_dim: usize,
    qubits: usize,
    sparsity: usize,
    max_norm: f64,
    columns: Vec<Vec<usize>>,
}

impl EncodedMatrix {
    /// Encodes `H` of an oscillator network with its padded neighbourhoods.
    pub fn from_system(sys: &SystemMatrices) -> Result<Self> {
        Self::build(&sys.hamiltonian, sys.padded_neighbors.clone(), sys.sparsity, sys.max_norm)
    }

    /// Encodes any real symmetric matrix, taking the access pattern of each
    /// row from its nonzero entries.
    pub fn from_matrix(h: &DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        let occupied: Vec<Vec<usize>> =
            (0..n).map(|u| (0..h.ncols()).filter(|&v| h[(u, v)] != 0.0).collect()).collect();
        let s = occupied.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let columns = occupied.iter().map(|o| pad_columns(o, s, n)).collect();
        let max_norm = h.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        Self::build(h, columns, s, max_norm)
    }

    fn build(h: &DMatrix<f64>, columns: Vec<Vec<usize>>, s: usize, max_norm: f64) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || h.ncols() != n || columns.len() != n {
            return Err(Error::Dimension(format!("cannot encode a {}x{} matrix", h.nrows(), h.ncols())));
        }
        if !(max_norm > 0.0) {
            return Err(Error::Dimension("cannot encode the zero matrix".into()));
        }
        crate::classical::check_symmetric(h, 1e-12 * max_norm)?;
        let qubits = n.next_power_of_two().trailing_zeros().max(1) as usize;
        let dim = 1usize << qubits;
        let mut matrix = DMatrix::zeros(dim, dim);
        matrix.view_mut((0, 0), (n, n)).copy_from(h);
        let mut cols = columns;
        for u in n..dim {
            matrix[(u, u)] = max_norm;
            cols.push(pad_columns(&[u], s, dim));
        }
        let enc = EncodedMatrix { matrix, logical_dim: n, qubits, sparsity: s, max_norm, columns: cols };
        enc.validate()?;
        Ok(enc)
    }

    fn validate(&self) -> Result<()> {
        let dim = self.dim();
        for (u, cols) in self.columns.iter().enumerate() {
            let mut sorted = cols.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.sparsity || cols.len() != self.sparsity {
                return Err(Error::NotIsometry(format!(
                    "row {u} lists {} column indices ({} distinct), expected {}",
                    cols.len(),
                    sorted.len(),
                    self.sparsity
                )));
            }
            if let Some(&bad) = cols.iter().find(|&&v| v >= dim) {
                return Err(Error::NotIsometry(format!("row {u} lists column {bad} outside 0..{dim}")));
            }
            for v in 0..dim {
                let x = self.matrix[(u, v)];
                if x != 0.0 && !cols.contains(&v) {
                    return Err(Error::Dimension(format!("nonzero entry ({u}, {v}) missing from the access pattern")));
                }
                if x.abs() > self.max_norm * (1.0 + 1e-12) {
                    return Err(Error::Dimension(format!("entry ({u}, {v}) exceeds the normaliser")));
                }
            }
            if self.matrix[(u, u)] < 0.0 {
                return Err(Error::Dimension(format!("negative diagonal entry at row {u}")));
            }
        }
        Ok(())
    }

    /// Same access pattern and normaliser with the entries multiplied by `c`,
    /// `0 < c <= 1`. The walk then encodes `c H` with the original `alpha`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::Argument(format!("scale factor {c} outside (0, 1]")));
        }
        let mut out = self.clone();
        out.matrix *= c;
        Ok(out)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of rows before padding.
    pub fn logical_dim(&self) -> usize {
        self.logical_dim
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `n`, the width of a row index.
    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn columns(&self, u: usize) -> &[usize] {
        &self.columns[u]
    }

    pub fn alpha(&self) -> f64 {
        1.0 / (self.sparsity as f64 * self.max_norm)
    }

    /// `s ||H||_max`.
    pub fn norm_bound(&self) -> f64 {
        self.sparsity as f64 * self.max_norm
    }

    /// `|H_uv| / ||H||_max`, clamped to `[0, 1]`.
    pub fn ratio(&self, u: usize, v: usize) -> f64 {
        (self.matrix[(u, v)].abs() / self.max_norm).min(1.0)
    }

    /// Phase `(i sgn(u - v))^{Theta(-H_uv)}` with `Theta(0) = 0`, `sgn(0) = 1`.
    pub fn sign_phase(&self, u: usize, v: usize) -> Complex64 {
        if self.matrix[(u, v)] < 0.0 {
            if u >= v {
                Complex64::new(0.0, 1.0)
            } else {
                Complex64::new(0.0, -1.0)
            }
        } else {
            ONE
        }
    }

    /// Exact `|psi_u>` on the `(flag, v)` space, index `flag + 2 v`.
    pub fn psi(&self, u: usize) -> Vec<Complex64> {
        let mut out = vec![ZERO; 2 * self.dim()];
        let norm = 1.0 / (self.sparsity as f64).sqrt();
        for &v in &self.columns[u] {
            let p = self.ratio(u, v);
            let ph = self.sign_phase(u, v) * norm;
            out[2 * v] = ph * p.sqrt();
            out[2 * v + 1] = ph * (1.0 - p).sqrt();
        }
        out
    }
}

/// `theta = arccos sqrt(ratio)` truncated to `r` bits of `pi / 2`, as the
/// integer `sum_l theta^(l) 2^{r-l}`. `theta = pi / 2` is not representable
/// and maps to all ones.
pub fn truncated_angle(ratio: f64, r: usize) -> usize {
    let theta = ratio.clamp(0.0, 1.0).sqrt().acos();
    let scale = (1u64 << r) as f64;
    let k = (theta / (PI / 2.0) * scale + 1e-9).floor() as usize;
    k.min((1usize << r) - 1)
}

/// Angle encoded by [`truncated_angle`].
pub fn decode_angle(k: usize, r: usize) -> f64 {
    PI / 2.0 * k as f64 / (1u64 << r) as f64
}

/// Oracles `O_P` and `O_theta` with an invocation counter.
#[derive(Debug)]
pub struct OracleSet {
    r: usize,
    /// Per-row real reflection sending `|0>` to the uniform superposition
    /// over the row's column set; self-inverse.
    position: Vec<DMatrix<Complex64>>,
    /// `O_theta` as a lookup table keyed by `v + 2^n u`, value
    /// `angle + 2^r sign`.
    angle_table: Vec<usize>,
    queries: Cell<u64>,
}

impl OracleSet {
    pub fn new(enc: &EncodedMatrix, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::Argument("angle register needs at least one bit".into()));
        }
        Ok(OracleSet {
            r,
            position: build_position_oracle(enc)?,
            angle_table: build_angle_table(enc, r),
            queries: Cell::new(0),
        })
    }

    pub fn angle_bits(&self) -> usize {
        self.r
    }

    pub fn position_blocks(&self) -> &[DMatrix<Complex64>] {
        &self.position
    }

    pub fn angle_table(&self) -> &[usize] {
        &self.angle_table
    }

    /// Oracle invocations so far.
    pub fn query_count(&self) -> u64 {
        self.queries.get()
    }

    pub fn reset_queries(&self) {
        self.queries.set(0);
    }

    fn tick(&self) {
        self.queries.set(self.queries.get() + 1);
    }
}

/// Per-row blocks of `O_P`: a Householder reflection mapping `e_0` to
/// `s^{-1/2} sum_{v in columns(u)} e_v`.
pub fn build_position_oracle(enc: &EncodedMatrix) -> Result<Vec<DMatrix<Complex64>>> {
    let d = enc.dim();
    let s = enc.sparsity();
    (0..d)
        .map(|u| {
            let cols = enc.columns(u);
            let mut seen = vec![false; d];
            for &v in cols {
                if v >= d || seen[v] {
                    return Err(Error::NotIsometry(format!("row {u} has duplicate or invalid column {v}")));
                }
                seen[v] = true;
            }
            let mut target = vec![0.0; d];
            for &v in cols {
                target[v] = 1.0 / (s as f64).sqrt();
            }
            let mut w = target.clone();
            w[0] -= 1.0;
            let wn: f64 = w.iter().map(|x| x * x).sum();
            Ok(DMatrix::from_fn(d, d, |i, j| {
                let id = if i == j { 1.0 } else { 0.0 };
                let h = if wn < 1e-30 { id } else { id - 2.0 * w[i] * w[j] / wn };
                Complex64::new(h, 0.0)
            }))
        })
        .collect()
}

/// Lookup table of `O_theta`: key `v + 2^n u`, value `k + 2^r sign`.
pub fn build_angle_table(enc: &EncodedMatrix, r: usize) -> Vec<usize> {
    let d = enc.dim();
    let mut table = vec![0; d * d];
    for u in 0..d {
        for v in 0..d {
            let sign = usize::from(enc.matrix()[(u, v)] < 0.0);
            table[v + d * u] = truncated_angle(enc.ratio(u, v), r) | (sign << r);
        }
    }
    table
}

/// Registers used by the gate-level walk. The `u` and `subsign` registers
/// are adjacent so that together they form the `(n+1)`-bit subtraction
/// target; the top bit then records whether `u < v`.
#[derive(Debug, Clone)]
pub struct WalkRegisters {
    pub flag: Register,
    pub v: Register,
    pub extra: Register,
    pub u: Register,
    pub subsign: Register,
    pub angle: Register,
    pub sign: Register,
    /// `u` followed by `subsign`.
    pub difference: Register,
    /// `flag, v, extra` as one register.
    pub block: Register,
    /// `flag, v, extra, u`: the space the dense backend works on.
    pub system: Register,
}

impl WalkRegisters {
    /// Appends the walk registers to `layout`. They are contiguous, system
    /// part first.
    pub fn push(layout: &mut RegisterLayout, n: usize, r: usize) -> Result<Self> {
        let flag = layout.push("flag", 1)?;
        let v = layout.push("v", n)?;
        let extra = layout.push("extra", 1)?;
        let u = layout.push("u", n)?;
        let subsign = layout.push("subsign", 1)?;
        let angle = layout.push("angle", r)?;
        let sign = layout.push("sign", 1)?;
        let difference = Register { name: "u-v".into(), start: u.start, width: n + 1 };
        let block = Register { name: "block".into(), start: flag.start, width: n + 2 };
        let system = Register { name: "system".into(), start: flag.start, width: 2 * n + 2 };
        Ok(WalkRegisters { flag, v, extra, u, subsign, angle, sign, difference, block, system })
    }

    /// Qubits taken by the walk registers.
    pub fn width(n: usize, r: usize) -> usize {
        2 * n + r + 4
    }
}

/// Gate-level walk operator.
#[derive(Debug)]
pub struct CircuitWalk {
    enc: EncodedMatrix,
    oracles: OracleSet,
}

impl CircuitWalk {
    /// Needs `r >= n + 1`: the angle register, idle during the reflection,
    /// lends its qubits to the Toffoli ladder.
    pub fn new(enc: EncodedMatrix, r: usize) -> Result<Self> {
        if r < enc.qubits() + 1 {
            return Err(Error::Argument(format!(
                "angle width {r} too small to host the {} work qubits of the reflection",
                enc.qubits() + 1
            )));
        }
        let oracles = OracleSet::new(&enc, r)?;
        Ok(CircuitWalk { enc, oracles })
    }

    pub fn encoded(&self) -> &EncodedMatrix {
        &self.enc
    }

    pub fn oracles(&self) -> &OracleSet {
        &self.oracles
    }

    pub fn alpha(&self) -> f64 {
        self.enc.alpha()
    }

    pub fn qubits(&self) -> usize {
        self.enc.qubits()
    }

    pub fn angle_bits(&self) -> usize {
        self.oracles.r
    }

    fn apply_position(&self, sv: &mut StateVector, regs: &WalkRegisters) -> Result<()> {
        self.oracles.tick();
        sv.apply_multiplexed(&regs.v, &self.oracles.position, Some(&regs.u), &[])
    }

    fn apply_angle(&self, sv: &mut StateVector, regs: &WalkRegisters) -> Result<()> {
        self.oracles.tick();
        sv.apply_xor_table(&[&regs.v, &regs.u], &[&regs.angle, &regs.sign], &self.oracles.angle_table)
    }

    fn rotation_unit(&self) -> f64 {
        // bit b of the angle register carries (pi/2) 2^{b-r}; Ry doubles it
        PI / (1u64 << self.oracles.r) as f64
    }

    /// `U_T`: prepares `|psi_u>` on `(flag, v)` from `|0>` given `|u>`.
    pub fn apply_ut(&self, sv: &mut StateVector, regs: &WalkRegisters) -> Result<()> {
        let flag = regs.flag.qubit(0);
        let sign = Control::on(regs.sign.qubit(0));
        let top = Control::on(regs.subsign.qubit(0));
        self.apply_position(sv, regs)?;
        self.apply_angle(sv, regs)?;
        sv.apply_ry_by_register(flag, &regs.angle, self.rotation_unit(), &[])?;
        sv.apply_gate(crate::simulator::Gate::S, sign.qubit, &[])?;
        sv.sub_from(&regs.v, &regs.difference, &[])?;
        sv.apply_phase_flip(&[sign, top])?;
        sv.add_into(&regs.v, &regs.difference, &[])?;
        self.apply_angle(sv, regs)
    }

    /// `U_T^dagger`, the reversed sequence.
    pub fn apply_ut_dagger(&self, sv: &mut StateVector, regs: &WalkRegisters) -> Result<()> {
        let flag = regs.flag.qubit(0);
        let sign = Control::on(regs.sign.qubit(0));
        let top = Control::on(regs.subsign.qubit(0));
        self.apply_angle(sv, regs)?;
        sv.sub_from(&regs.v, &regs.difference, &[])?;
        sv.apply_phase_flip(&[sign, top])?;
        sv.add_into(&regs.v, &regs.difference, &[])?;
        sv.apply_gate(crate::simulator::Gate::Sdg, sign.qubit, &[])?;
        sv.apply_ry_by_register(flag, &regs.angle, -self.rotation_unit(), &[])?;
        self.apply_angle(sv, regs)?;
        self.apply_position(sv, regs)
    }

    fn apply_swap(&self, sv: &mut StateVector, regs: &WalkRegisters, controls: &[Control]) -> Result<()> {
        sv.apply_swap(regs.flag.qubit(0), regs.extra.qubit(0), controls)?;
        for k in 0..regs.v.width {
            sv.apply_swap(regs.v.qubit(k), regs.u.qubit(k), controls)?;
        }
        Ok(())
    }

    /// `U_H = U_T^dagger SWAP U_T`.
    pub fn apply_uh(&self, sv: &mut StateVector, regs: &WalkRegisters) -> Result<()> {
        self.apply_ut(sv, regs)?;
        self.apply_swap(sv, regs, &[])?;
        self.apply_ut_dagger(sv, regs)
    }

    /// Controlled `V = U_H (2 Pi - I)`. Only the reflection and the swap are
    /// controlled; with the control off the two `U_T` halves cancel.
    pub fn apply_controlled_walk(&self, sv: &mut StateVector, regs: &WalkRegisters, control: usize) -> Result<()> {
        let mut controls = vec![Control::on(control)];
        controls.extend(regs.block.qubits().map(Control::off));
        let work: Vec<usize> = regs.angle.qubits().collect();
        sv.apply_phase_flip_ladder(&controls, &work)?;
        sv.apply_gate(crate::simulator::Gate::Z, control, &[])?;
        self.apply_ut(sv, regs)?;
        self.apply_swap(sv, regs, &[Control::on(control)])?;
        self.apply_ut_dagger(sv, regs)
    }

    /// Controlled `V^power`, by repetition.
    pub fn apply_controlled_power(&self, sv: &mut StateVector, regs: &WalkRegisters, control: usize, power: usize) -> Result<()> {
        for _ in 0..power {
            self.apply_controlled_walk(sv, regs, control)?;
        }
        Ok(())
    }

    /// Columns `U_T |0>|u>` restricted to the system registers, one per
    /// row `u`. Fails if the angle, sign or subsign registers are not
    /// returned to zero.
    pub fn ut_columns(&self) -> Result<Vec<Vec<Complex64>>> {
        let n = self.qubits();
        let mut layout = RegisterLayout::new();
        let regs = WalkRegisters::push(&mut layout, n, self.oracles.r)?;
        let mut out = Vec::with_capacity(self.enc.dim());
        for u in 0..self.enc.dim() {
            let mut sv = StateVector::new(layout.clone())?;
            sv.set_basis(regs.u.with_value(0, u))?;
            self.apply_ut(&mut sv, &regs)?;
            out.push(restrict_to_system(&sv, &regs, 1e-10)?);
        }
        Ok(out)
    }

    /// `<0|^a U_H |0>^a` computed from the circuit's `U_T` columns, using
    /// `<0,u| U_T^dagger SWAP U_T |0,v> = <U_T 0u| SWAP |U_T 0v>`.
    pub fn block(&self) -> Result<DMatrix<Complex64>> {
        let cols = self.ut_columns()?;
        Ok(block_from_columns(&cols, self.qubits()))
    }

    /// `<0|^a U_H |0>^a` by running the full `U_H` circuit on each basis
    /// input.
    pub fn block_via_uh(&self) -> Result<DMatrix<Complex64>> {
        let n = self.qubits();
        let d = self.enc.dim();
        let mut layout = RegisterLayout::new();
        let regs = WalkRegisters::push(&mut layout, n, self.oracles.r)?;
        let mut out = DMatrix::zeros(d, d);
        for v in 0..d {
            let mut sv = StateVector::new(layout.clone())?;
            sv.set_basis(regs.u.with_value(0, v))?;
            self.apply_uh(&mut sv, &regs)?;
            let col = restrict_to_system(&sv, &regs, 1e-10)?;
            for u in 0..d {
                out[(u, v)] = col[u << (n + 2)];
            }
        }
        Ok(out)
    }
}

/// The system-register amplitudes of a state whose other qubits must read
/// zero (up to `tol` in population).
pub fn restrict_to_system(sv: &StateVector, regs: &WalkRegisters, tol: f64) -> Result<Vec<Complex64>> {
    let leak: f64 = [&regs.subsign, &regs.angle, &regs.sign]
        .iter()
        .map(|r| sv.population_outside(r, 0))
        .sum();
    if leak > tol {
        return Err(Error::AncillaNotRestored(leak));
    }
    let sys = &regs.system;
    let mut out = vec![ZERO; sys.dim()];
    for (i, a) in sv.amplitudes().iter().enumerate() {
        if i & !sys.mask() == 0 {
            out[sys.value_of(i)] = *a;
        }
    }
    Ok(out)
}

/// Index of the swap partner: exchanges the low and high `n+1` bits.
fn swap_index(i: usize, n: usize) -> usize {
    let half = n + 1;
    let lo = i & ((1 << half) - 1);
    let hi = i >> half;
    hi | (lo << half)
}

fn block_from_columns(cols: &[Vec<Complex64>], n: usize) -> DMatrix<Complex64> {
    let d = cols.len();
    DMatrix::from_fn(d, d, |u, v| {
        cols[u]
            .iter()
            .enumerate()
            .map(|(i, a)| a.conj() * cols[v][swap_index(i, n)])
            .sum()
    })
}

/// Dense `U_T`, `U_H` and `V` built from the exact amplitudes.
#[derive(Debug, Clone)]
pub struct DenseWalk {
    n: usize,
    alpha: f64,
    ut: DMatrix<Complex64>,
    uh: DMatrix<Complex64>,
    walk: DMatrix<Complex64>,
}

impl DenseWalk {
    pub fn new(enc: &EncodedMatrix) -> Result<Self> {
        let ut = build_dense_ut(enc)?;
        let uh = build_uh(&ut, enc.qubits());
        let walk = build_walk(&uh, enc.qubits());
        Ok(DenseWalk { n: enc.qubits(), alpha: enc.alpha(), ut, uh, walk })
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn ut(&self) -> &DMatrix<Complex64> {
        &self.ut
    }

    pub fn uh(&self) -> &DMatrix<Complex64> {
        &self.uh
    }

    pub fn walk(&self) -> &DMatrix<Complex64> {
        &self.walk
    }

    /// `<0|^a U_H |0>^a`.
    pub fn block(&self) -> DMatrix<Complex64> {
        extract_block(&self.uh, self.n)
    }

    /// `V^(2^k)` for `k = 0..m`, by repeated squaring.
    pub fn powers(&self, m: usize) -> Vec<DMatrix<Complex64>> {
        let mut out = Vec::with_capacity(m);
        let mut p = self.walk.clone();
        for _ in 0..m {
            let next = &p * &p;
            out.push(p);
            p = next;
        }
        out
    }
}

/// Dense `U_T` on the system space: for each `u`, a unitary on `(flag, v)`
/// whose first column is `|psi_u>`, completed by Gram-Schmidt; identity on
/// `extra`.
pub fn build_dense_ut(enc: &EncodedMatrix) -> Result<DMatrix<Complex64>> {
    let n = enc.qubits();
    let half = 1usize << (n + 1);
    let total = 1usize << (2 * n + 2);
    let mut ut = DMatrix::zeros(total, total);
    for u in 0..enc.dim() {
        let w = complete_unitary(&enc.psi(u))?;
        for extra in 0..2 {
            let off = half * extra + (half << 1) * u;
            for i in 0..half {
                for j in 0..half {
                    ut[(off + i, off + j)] = w[(i, j)];
                }
            }
        }
    }
    Ok(ut)
}

/// Unitary with `first` as its first column; the rest is Gram-Schmidt on the
/// standard basis, so the completion is deterministic.
pub fn complete_unitary(first: &[Complex64]) -> Result<DMatrix<Complex64>> {
    let d = first.len();
    let norm: f64 = first.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::NotIsometry(format!("column has norm {norm}")));
    }
    let mut basis: Vec<Vec<Complex64>> = vec![first.to_vec()];
    for k in 0..d {
        if basis.len() == d {
            break;
        }
        let mut e = vec![ZERO; d];
        e[k] = ONE;
        for _ in 0..2 {
            for b in &basis {
                let proj: Complex64 = b.iter().zip(&e).map(|(x, y)| x.conj() * y).sum();
                for (ei, bi) in e.iter_mut().zip(b) {
                    *ei -= proj * bi;
                }
            }
        }
        let n: f64 = e.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-8 {
            e.iter_mut().for_each(|a| *a /= n);
            basis.push(e);
        }
    }
    Ok(DMatrix::from_fn(d, d, |i, j| basis[j][i]))
}

/// `U_H = U_T^dagger SWAP_{n+1} U_T`.
pub fn build_uh(ut: &DMatrix<Complex64>, n: usize) -> DMatrix<Complex64> {
    let d = ut.nrows();
    let swapped = DMatrix::from_fn(d, d, |i, j| ut[(swap_index(i, n), j)]);
    ut.adjoint() * swapped
}

/// `V = U_H (2 Pi - I)` with `Pi` projecting the block ancilla on zero.
pub fn build_walk(uh: &DMatrix<Complex64>, n: usize) -> DMatrix<Complex64> {
    let mask = (1usize << (n + 2)) - 1;
    let mut v = uh.clone();
    for j in 0..v.ncols() {
        if j & mask != 0 {
            v.column_mut(j).neg_mut();
        }
    }
    v
}

/// Top-left block `<0|^a U |0>^a` indexed by `u`.
pub fn extract_block(u: &DMatrix<Complex64>, n: usize) -> DMatrix<Complex64> {
    let d = 1usize << n;
    DMatrix::from_fn(d, d, |a, b| u[(a << (n + 2), b << (n + 2))])
}

/// Largest `|block - alpha H|` over the logical rows.
pub fn block_error(block: &DMatrix<Complex64>, enc: &EncodedMatrix) -> f64 {
    let n = enc.logical_dim();
    let a = enc.alpha();
    let mut err = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            err = err.max((block[(i, j)] - Complex64::new(a * enc.matrix()[(i, j)], 0.0)).norm());
        }
    }
    err
}

/// Eigenpair of the walk in the plane spanned by `|0>^a|lambda>` and its
/// image.
#[derive(Debug, Clone)]
pub struct WalkEigenpair {
    pub eigenvalue: Complex64,
    /// Normalised eigenvector.
    pub vector: nalgebra::DVector<Complex64>,
    /// `|| V x - mu x ||` of the computed eigenvector.
    pub residual: f64,
}

/// Restricts the walk to the invariant plane generated by
/// `|0>^a |eigvec>` and returns its two eigenvalues with residuals. For
/// `alpha lambda = +-1` the plane is a line and both entries coincide.
pub fn walk_eigenpairs(walk: &DMatrix<Complex64>, n: usize, eigvec: &[f64]) -> [WalkEigenpair; 2] {
    let d = walk.nrows();
    let mut e = nalgebra::DVector::<Complex64>::zeros(d);
    for (u, &x) in eigvec.iter().enumerate() {
        e[u << (n + 2)] = Complex64::new(x, 0.0);
    }
    let en = e.norm();
    e /= Complex64::new(en, 0.0);
    let f = walk * &e;
    let overlap = e.dotc(&f);
    let g_raw = &f - &e * overlap;
    let gn = g_raw.norm();
    let pair = |mu: Complex64, x: &nalgebra::DVector<Complex64>| {
        let x = x / Complex64::new(x.norm(), 0.0);
        let r = walk * &x - &x * mu;
        WalkEigenpair { eigenvalue: mu, residual: r.norm(), vector: x }
    };
    if gn < 1e-12 {
        let p = pair(overlap, &e);
        return [p.clone(), p];
    }
    let g = g_raw / Complex64::new(gn, 0.0);
    let vg = walk * &g;
    let a = overlap;
    let b = e.dotc(&vg);
    let c = g.dotc(&f);
    let dd = g.dotc(&vg);
    let tr = a + dd;
    let det = a * dd - b * c;
    let disc = (tr * tr - det * 4.0).sqrt();
    let mut out = [(tr + disc) / 2.0, (tr - disc) / 2.0].map(|mu| {
        // eigenvector of [[a, b], [c, dd]] for mu
        let (x, y) = if b.norm() > (mu - a).norm() { (b, mu - a) } else { (mu - dd, c) };
        pair(mu, &(&e * x + &g * y))
    });
    out.sort_by(|p, q| q.eigenvalue.im.total_cmp(&p.eigenvalue.im));
    out
}

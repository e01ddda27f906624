//! Phase estimation of the walk operator.
//!
//! The phase register is prepared in uniform superposition, controls
//! `V^(2^k)` from qubit `k`, and is read out after an inverse QFT. An
//! eigenvalue `lambda` of `H` shows up as a pair of peaks at `+-phi` with
//! `phi = (M / 2 pi) arccos(lambda / (s ||H||_max))`.
//!
//! Three backends produce the phase-register distribution: the gate-level
//! circuit, the dense walk matrix, and the closed-form expression. Shots
//! are then drawn from that distribution, one independent random stream
//! per shot.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::blockenc::{CircuitWalk, DenseWalk, EncodedMatrix, WalkRegisters};
use crate::classical::{diagonalize_matrix, ModalData};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::simulator::{check_qubit_budget, sample_index, Control, Gate, Register, RegisterLayout, StateVector};

/// Which engine produces the phase distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Circuit,
    Dense,
    Analytic,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circuit" => Ok(Backend::Circuit),
            "dense" => Ok(Backend::Dense),
            "analytic" => Ok(Backend::Analytic),
            other => Err(Error::Argument(format!("unknown backend `{other}`"))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Circuit => "circuit",
            Backend::Dense => "dense",
            Backend::Analytic => "analytic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpeConfig {
    /// Phase register width.
    pub m: usize,
    /// Vertex whose response is probed.
    pub u: usize,
    /// Second vertex for the Hadamard-test variant.
    pub v: Option<usize>,
    pub shots: usize,
    pub backend: Backend,
    pub seed: u64,
    /// Angle register width of the circuit backend.
    pub angle_bits: usize,
}

impl QpeConfig {
    pub fn new(m: usize, u: usize) -> Self {
        QpeConfig { m, u, v: None, shots: 1000, backend: Backend::Analytic, seed: 0, angle_bits: 12 }
    }

    pub fn big_m(&self) -> usize {
        1 << self.m
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Argument("phase register needs at least one qubit".into()));
        }
        if self.m > 30 {
            return Err(Error::Argument(format!("phase register width {} is too large", self.m)));
        }
        if self.shots == 0 {
            return Err(Error::Argument("at least one shot is required".into()));
        }
        Ok(())
    }
}

/// `phi = (M / 2 pi) arccos(lambda / bound)` for `bound = s ||H||_max`.
pub fn phase_of(lambda: f64, bound: f64, m: usize) -> Result<f64> {
    if lambda.abs() > bound * (1.0 + 1e-12) {
        return Err(Error::NotEncodable { lambda, bound });
    }
    let big_m = (1u64 << m) as f64;
    Ok(big_m / (2.0 * PI) * (lambda / bound).clamp(-1.0, 1.0).acos())
}

/// Inverse of [`phase_of`] on a (possibly fractional) bin.
pub fn eigenvalue_of(phase: f64, bound: f64, m: usize) -> f64 {
    let big_m = (1u64 << m) as f64;
    bound * (2.0 * PI * phase / big_m).cos()
}

/// `|a|^2 = M^-2 [sin(pi d) / sin(pi d / M)]^2` with `d = phi - x`. The
/// removable singularity at `d = 0 mod M` is exactly 1.
pub fn dirichlet(phi: f64, x: f64, big_m: usize) -> f64 {
    let mf = big_m as f64;
    let d = phi - x;
    let den = (PI * d / mf).sin();
    if den == 0.0 || (d / mf).fract() == 0.0 {
        return 1.0;
    }
    let num = (PI * d).sin();
    (num / den / mf).powi(2)
}

/// A distribution over phase-register outcomes, optionally joint with the
/// Hadamard-test qubit (index `h * M + x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDistribution {
    pub m: usize,
    pub joint: bool,
    pub probabilities: Vec<f64>,
}

impl PhaseDistribution {
    pub fn big_m(&self) -> usize {
        1 << self.m
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    /// `P(x)` for the local case, or the slice of `h` for the joint case.
    pub fn slice(&self, h: usize) -> &[f64] {
        let mm = self.big_m();
        &self.probabilities[h * mm..(h + 1) * mm]
    }

    /// Marginal over the Hadamard bit.
    pub fn phase_marginal(&self) -> Vec<f64> {
        if !self.joint {
            return self.probabilities.clone();
        }
        let mm = self.big_m();
        (0..mm).map(|x| self.probabilities[x] + self.probabilities[mm + x]).collect()
    }

    /// Empirical distribution of samples.
    pub fn from_samples(samples: &[PhaseSample], m: usize, joint: bool) -> Self {
        let mm = 1usize << m;
        let mut probabilities = vec![0.0; if joint { 2 * mm } else { mm }];
        let w = 1.0 / samples.len().max(1) as f64;
        for s in samples {
            probabilities[s.h as usize * mm + s.x] += w;
        }
        PhaseDistribution { m, joint, probabilities }
    }
}

/// One measured shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSample {
    /// Hadamard-test bit, always 0 in the local case.
    pub h: u8,
    pub x: usize,
}

/// `(eigenvalue, weight)` pairs driving a distribution.
fn spectrum_terms(modal: &ModalData, u: usize, v: Option<usize>, sign: f64) -> Vec<(f64, f64)> {
    (0..modal.dim())
        .map(|j| {
            let wu = modal.modes[(u, j)];
            let w = match v {
                None => wu * wu,
                Some(v) => ((wu + sign * modal.modes[(v, j)]) / 2.0).powi(2),
            };
            (modal.eigenvalues[j], w)
        })
        .collect()
}

fn distribution_from_terms(terms: &[(f64, f64)], bound: f64, m: usize) -> Result<Vec<f64>> {
    let mm = 1usize << m;
    let mut p = vec![0.0; mm];
    for &(lambda, w) in terms {
        if w == 0.0 {
            continue;
        }
        let phi = phase_of(lambda, bound, m)?;
        for (x, px) in p.iter_mut().enumerate() {
            let xf = x as f64;
            *px += w / 2.0 * (dirichlet(phi, xf, mm) + dirichlet(-phi, xf, mm));
        }
    }
    Ok(p)
}

/// Closed-form `P(x) = sum_j (W_uj^2 / 2)(|a_x+|^2 + |a_x-|^2)`.
pub fn analytic_distribution(modal: &ModalData, u: usize, bound: f64, m: usize) -> Result<PhaseDistribution> {
    check_vertex(modal, u)?;
    let probabilities = distribution_from_terms(&spectrum_terms(modal, u, None, 1.0), bound, m)?;
    Ok(PhaseDistribution { m, joint: false, probabilities })
}

/// Closed-form joint distribution of the Hadamard test on `(|u> + |v>)/sqrt 2`:
/// `J(h, x) = sum_j (c_hj^2 / 2)(|a_x+|^2 + |a_x-|^2)` with
/// `c_hj = (W_uj +- W_vj) / 2`.
pub fn analytic_joint_distribution(modal: &ModalData, u: usize, v: usize, bound: f64, m: usize) -> Result<PhaseDistribution> {
    check_vertex(modal, u)?;
    check_vertex(modal, v)?;
    let mut probabilities = distribution_from_terms(&spectrum_terms(modal, u, Some(v), 1.0), bound, m)?;
    probabilities.extend(distribution_from_terms(&spectrum_terms(modal, u, Some(v), -1.0), bound, m)?);
    Ok(PhaseDistribution { m, joint: true, probabilities })
}

fn check_vertex(modal: &ModalData, u: usize) -> Result<()> {
    if u >= modal.dim() {
        return Err(Error::VertexOutOfRange { vertex: u, size: modal.dim() });
    }
    Ok(())
}

/// `6 (2^m - 1)`: oracle calls made by one phase-estimation run.
pub fn query_formula(m: usize) -> u64 {
    6 * ((1u64 << m) - 1)
}

/// Qubits used by the circuit backend.
pub fn circuit_qubits(n: usize, r: usize, m: usize, nonlocal: bool) -> usize {
    WalkRegisters::width(n, r) + m + usize::from(nonlocal)
}

/// A matrix together with what every backend needs.
#[derive(Debug, Clone)]
pub struct QpeProblem {
    pub encoded: EncodedMatrix,
    /// Spectrum of the (padded) encoded matrix.
    pub modal: ModalData,
}

impl QpeProblem {
    pub fn new(encoded: EncodedMatrix) -> Result<Self> {
        let modal = diagonalize_matrix(encoded.matrix())?;
        Ok(QpeProblem { encoded, modal })
    }

    pub fn bound(&self) -> f64 {
        self.encoded.norm_bound()
    }
}

/// Outcome of [`run_qpe`] or [`run_qpe_nonlocal`].
#[derive(Debug, Clone)]
pub struct QpeRun {
    pub config: QpeConfig,
    pub samples: Vec<PhaseSample>,
    /// The exact distribution the shots were drawn from.
    pub distribution: PhaseDistribution,
    /// Oracle queries of one shot (formula value for the dense and analytic
    /// backends, instrumented count for the circuit).
    pub queries_per_shot: u64,
    /// Qubits the circuit for this run occupies.
    pub qubits: usize,
}

/// Local phase estimation on `|u>`.
pub fn run_qpe(problem: &QpeProblem, config: &QpeConfig) -> Result<QpeRun> {
    config.validate()?;
    if config.u >= problem.encoded.logical_dim() {
        return Err(Error::VertexOutOfRange { vertex: config.u, size: problem.encoded.logical_dim() });
    }
    run(problem, config, None)
}

/// Hadamard-test phase estimation on `(|u> + |v>)/sqrt 2`.
pub fn run_qpe_nonlocal(problem: &QpeProblem, config: &QpeConfig) -> Result<QpeRun> {
    config.validate()?;
    let v = config.v.ok_or_else(|| Error::Argument("nonlocal run needs a second vertex".into()))?;
    if v == config.u {
        return Err(Error::Argument("u = v: use the local estimate".into()));
    }
    for w in [config.u, v] {
        if w >= problem.encoded.logical_dim() {
            return Err(Error::VertexOutOfRange { vertex: w, size: problem.encoded.logical_dim() });
        }
    }
    run(problem, config, Some(v))
}

fn run(problem: &QpeProblem, config: &QpeConfig, v: Option<usize>) -> Result<QpeRun> {
    let n = problem.encoded.qubits();
    let qubits = circuit_qubits(n, config.angle_bits, config.m, v.is_some());
    let (distribution, queries) = match config.backend {
        Backend::Analytic => {
            let d = match v {
                None => analytic_distribution(&problem.modal, config.u, problem.bound(), config.m)?,
                Some(v) => analytic_joint_distribution(&problem.modal, config.u, v, problem.bound(), config.m)?,
            };
            (d, query_formula(config.m))
        }
        Backend::Dense => (dense_distribution(problem, config, v)?, query_formula(config.m)),
        Backend::Circuit => circuit_distribution(problem, config, v)?,
    };
    let samples = sample_shots(&distribution, config.shots, config.seed)?;
    Ok(QpeRun { config: config.clone(), samples, distribution, queries_per_shot: queries, qubits })
}

/// Draws `shots` outcomes, shot `i` from random stream `i` of `seed`.
pub fn sample_shots(dist: &PhaseDistribution, shots: usize, seed: u64) -> Result<Vec<PhaseSample>> {
    let mm = dist.big_m();
    (0..shots)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let k = sample_index(&dist.probabilities, &mut rng)?;
            Ok(PhaseSample { h: (k / mm) as u8, x: k % mm })
        })
        .collect()
}

/// Sets the system register to `|u>`, or with a Hadamard qubit to
/// `(|0>(|u> + |v>) + |1>(|u> - |v>)) / 2`.
fn prepare_input(sv: &mut StateVector, state: &Register, u: usize, v: Option<(usize, &Register)>) -> Result<()> {
    for k in 0..state.width {
        if (u >> k) & 1 == 1 {
            sv.apply_gate(Gate::X, state.qubit(k), &[])?;
        }
    }
    if let Some((v, had)) = v {
        let h = had.qubit(0);
        sv.apply_gate(Gate::H, h, &[])?;
        for k in 0..state.width {
            if ((u ^ v) >> k) & 1 == 1 {
                sv.apply_gate(Gate::X, state.qubit(k), &[Control::on(h)])?;
            }
        }
        sv.apply_gate(Gate::H, h, &[])?;
    }
    Ok(())
}

fn readout(sv: &StateVector, phase: &Register, had: Option<&Register>, m: usize) -> PhaseDistribution {
    match had {
        None => PhaseDistribution { m, joint: false, probabilities: sv.probabilities(phase) },
        Some(h) => PhaseDistribution { m, joint: true, probabilities: sv.joint_probabilities(&[phase, h]) },
    }
}

fn dense_distribution(problem: &QpeProblem, config: &QpeConfig, v: Option<usize>) -> Result<PhaseDistribution> {
    let n = problem.encoded.qubits();
    let walk = DenseWalk::new(&problem.encoded)?;
    let mut layout = RegisterLayout::new();
    let system = layout.push("system", 2 * n + 2)?;
    let phase = layout.push("phase", config.m)?;
    let had = match v {
        Some(_) => Some(layout.push("hadamard", 1)?),
        None => None,
    };
    check_qubit_budget(layout.total_qubits())?;
    let state = Register { name: "u".into(), start: system.start + n + 2, width: n };
    let mut sv = StateVector::new(layout)?;
    prepare_input(&mut sv, &state, config.u, v.zip(had.as_ref()))?;
    let powers = walk.powers(config.m);
    apply_phase_estimation(&mut sv, &phase, |sv, k, ctrl| sv.apply_unitary(&system, &powers[k], &[Control::on(ctrl)]))?;
    Ok(readout(&sv, &phase, had.as_ref(), config.m))
}

fn circuit_distribution(problem: &QpeProblem, config: &QpeConfig, v: Option<usize>) -> Result<(PhaseDistribution, u64)> {
    let n = problem.encoded.qubits();
    check_qubit_budget(circuit_qubits(n, config.angle_bits, config.m, v.is_some()))?;
    let walk = CircuitWalk::new(problem.encoded.clone(), config.angle_bits)?;
    let mut layout = RegisterLayout::new();
    let regs = WalkRegisters::push(&mut layout, n, config.angle_bits)?;
    let phase = layout.push("phase", config.m)?;
    let had = match v {
        Some(_) => Some(layout.push("hadamard", 1)?),
        None => None,
    };
    let mut sv = StateVector::new(layout)?;
    prepare_input(&mut sv, &regs.u, config.u, v.zip(had.as_ref()))?;
    apply_phase_estimation(&mut sv, &phase, |sv, k, ctrl| walk.apply_controlled_power(sv, &regs, ctrl, 1 << k))?;
    let leak = [&regs.subsign, &regs.angle, &regs.sign].iter().map(|r| sv.population_outside(r, 0)).sum::<f64>();
    if leak > 1e-10 {
        return Err(Error::AncillaNotRestored(leak));
    }
    Ok((readout(&sv, &phase, had.as_ref(), config.m), walk.oracles().query_count()))
}

/// Hadamards on the phase register, `controlled_power(sv, k, qubit_k)` for
/// each bit, then the inverse QFT.
fn apply_phase_estimation(
    sv: &mut StateVector,
    phase: &Register,
    mut controlled_power: impl FnMut(&mut StateVector, usize, usize) -> Result<()>,
) -> Result<()> {
    for k in 0..phase.width {
        sv.apply_gate(Gate::H, phase.qubit(k), &[])?;
    }
    for k in 0..phase.width {
        controlled_power(sv, k, phase.qubit(k))?;
    }
    sv.inverse_qft(phase)
}

/// `(1/2) sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Threshold on the total-variation distance between an empirical
/// histogram of `shots` draws and its source `p`: the expected deviation
/// `(1/2) sum sqrt(p (1 - p) / n)` plus a McDiarmid tail term at failure
/// probability `beta`.
pub fn tv_threshold(p: &[f64], shots: usize, beta: f64) -> f64 {
    let n = shots as f64;
    let mean: f64 = 0.5 * p.iter().map(|&x| (x * (1.0 - x) / n).max(0.0).sqrt()).sum::<f64>();
    mean + ((1.0 / beta).ln() / (2.0 * n)).sqrt()
}

/// `a_x = M^-1 sum_z e^{2 pi i z (phi - x) / M}` summed term by term.
pub fn qpe_amplitude(phi: f64, x: usize, big_m: usize) -> Complex64 {
    let mf = big_m as f64;
    (0..big_m)
        .map(|z| Complex64::from_polar(1.0 / mf, 2.0 * PI * z as f64 * (phi - x as f64) / mf))
        .sum()
}

//! End-to-end response estimation: size the registers, sample phase
//! estimation, recover the poles, rebuild `G(i omega)` and compare it with
//! the classical curve.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blockenc::EncodedMatrix;
use crate::classical::{diagonalize, response_local, response_nonlocal, ModalData, ResponseFunction};
use crate::error::{Error, Result};
use crate::estimator::{
    classical_truth_local, classical_truth_nonlocal, compare_response, estimate_local, estimate_nonlocal,
    maybe_rescale, pole_free_grid, size_registers, EstimateParams, EstimationRun, PeakCount, ResponseComparison,
    SizingReport, Tolerances,
};
use crate::network::{build_matrices, OscillatorNetwork, SystemMatrices};
use crate::qpe::{run_qpe, run_qpe_nonlocal, Backend, PhaseDistribution, PhaseSample, QpeConfig, QpeProblem};

/// Weights below this are treated as "eigenvalue not present at the vertex".
pub const SUPPORT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub u: usize,
    /// Second vertex for `G_uv`.
    pub v: Option<usize>,
    pub tolerances: Tolerances,
    pub backend: Backend,
    pub angle_bits: usize,
    /// Replaces the Hoeffding sample count.
    pub shots_override: Option<usize>,
    /// Replaces the chosen phase register width (must not go below the
    /// sizing minimum).
    pub m_override: Option<usize>,
    pub seed: u64,
    /// Encode `cos(2 pi Q / M) H` so eigenvalues near `s ||H||_max` stay
    /// clear of the window guard.
    pub rescale: bool,
    /// Count peaks by mass instead of using the classical support count.
    pub blind: bool,
    /// Number of frequencies in the comparison grid.
    pub grid_points: usize,
}

impl PipelineConfig {
    pub fn new(u: usize, tolerances: Tolerances) -> Self {
        PipelineConfig {
            u,
            v: None,
            tolerances,
            backend: Backend::Analytic,
            angle_bits: 12,
            shots_override: None,
            m_override: None,
            seed: 0,
            rescale: false,
            blind: false,
            grid_points: 200,
        }
    }
}

/// Everything a pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub sizing: SizingReport,
    pub shots: usize,
    pub queries_per_shot: u64,
    pub total_queries: u64,
    pub qubits: usize,
    pub samples: Vec<PhaseSample>,
    pub histogram: PhaseDistribution,
    pub run: EstimationRun,
    pub exact: ResponseFunction,
    pub grid: Vec<f64>,
    pub comparison: ResponseComparison,
    /// Bound violations; empty when the run met its tolerances.
    pub failures: Vec<String>,
    pub seconds: f64,
}

impl PipelineReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Minimum gap among a set of eigenvalues, `None` for fewer than two.
fn min_gap(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).map(|w| w[1] - w[0]).min_by(f64::total_cmp)
}

pub fn run_pipeline(net: &OscillatorNetwork, config: &PipelineConfig) -> Result<PipelineReport> {
    let sys = build_matrices(net);
    let modal = diagonalize(&sys)?;
    run_pipeline_with(net, &sys, &modal, config)
}

/// As [`run_pipeline`], reusing prebuilt matrices and modal data.
pub fn run_pipeline_with(
    net: &OscillatorNetwork,
    sys: &SystemMatrices,
    modal: &ModalData,
    config: &PipelineConfig,
) -> Result<PipelineReport> {
    let start = Instant::now();
    let plan = plan(net, sys, modal, config)?;
    let qcfg = QpeConfig {
        m: plan.sizing.m_chosen,
        u: config.u,
        v: config.v,
        shots: config.shots_override.unwrap_or(plan.sizing.n_samples),
        backend: config.backend,
        seed: config.seed,
        angle_bits: config.angle_bits,
    };
    let qrun = match config.v {
        None => run_qpe(&plan.problem, &qcfg)?,
        Some(_) => run_qpe_nonlocal(&plan.problem, &qcfg)?,
    };
    finish(net, modal, config, plan, qrun.samples, qrun.queries_per_shot, qrun.qubits, start)
}

/// Runs the estimation half of the pipeline on shots recorded elsewhere.
/// `config.m_override` must hold the phase register width of the samples.
pub fn estimate_from_samples(
    net: &OscillatorNetwork,
    config: &PipelineConfig,
    samples: Vec<PhaseSample>,
    queries_per_shot: u64,
    qubits: usize,
) -> Result<PipelineReport> {
    let start = Instant::now();
    if config.m_override.is_none() {
        return Err(Error::Argument("the phase register width of the samples is required".into()));
    }
    if samples.is_empty() {
        return Err(Error::Argument("no samples".into()));
    }
    let sys = build_matrices(net);
    let modal = diagonalize(&sys)?;
    let plan = plan(net, &sys, &modal, config)?;
    let big_m = plan.sizing.big_m();
    if let Some(bad) = samples.iter().find(|s| s.x >= big_m || s.h > 1 || (s.h == 1 && config.v.is_none())) {
        return Err(Error::Argument(format!("sample {bad:?} does not fit m = {}", plan.sizing.m_chosen)));
    }
    finish(net, &modal, config, plan, samples, queries_per_shot, qubits, start)
}

struct Plan {
    truth: Vec<(f64, f64)>,
    sizing: SizingReport,
    problem: QpeProblem,
    scale: f64,
}

fn plan(net: &OscillatorNetwork, sys: &SystemMatrices, modal: &ModalData, config: &PipelineConfig) -> Result<Plan> {
    let n = net.len();
    let (u, tol) = (config.u, config.tolerances);
    for w in std::iter::once(u).chain(config.v) {
        if w >= n {
            return Err(Error::VertexOutOfRange { vertex: w, size: n });
        }
    }
    if config.v == Some(u) {
        return Err(Error::Argument("u = v: use the local estimate".into()));
    }
    let truth = match config.v {
        None => classical_truth_local(modal, u, SUPPORT_TOL),
        Some(v) => classical_truth_nonlocal(modal, u, v, SUPPORT_TOL),
    };
    let lambdas: Vec<f64> = truth.iter().map(|t| t.0).collect();
    let mut sizing = size_registers(sys.norm_bound(), min_gap(&lambdas), truth.len(), tol)?;
    if let Some(m) = config.m_override {
        sizing = sizing.with_phase_bits(m)?;
    }
    let (encoded, scale) = maybe_rescale(&EncodedMatrix::from_system(sys)?, sizing.q, sizing.m_chosen, config.rescale)?;
    let problem = QpeProblem::new(encoded)?;
    Ok(Plan { truth, sizing, problem, scale })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    net: &OscillatorNetwork,
    modal: &ModalData,
    config: &PipelineConfig,
    plan: Plan,
    samples: Vec<PhaseSample>,
    queries_per_shot: u64,
    qubits: usize,
    start: Instant,
) -> Result<PipelineReport> {
    let (u, tol) = (config.u, config.tolerances);
    let Plan { truth, sizing, problem, scale } = plan;
    let (m, q) = (sizing.m_chosen, sizing.q);
    let histogram = PhaseDistribution::from_samples(&samples, m, config.v.is_some());
    let count = if config.blind {
        PeakCount::Blind { threshold: tol.delta / 2.0 }
    } else {
        PeakCount::Known(truth.len())
    };
    let params = EstimateParams { m, q, norm_bound: problem.bound(), scale, count };
    let masses = net.masses();
    let (mut run, exact) = match config.v {
        None => (estimate_local(&histogram, &params, masses[u])?, response_local(modal, u, masses[u])),
        Some(v) => (
            estimate_nonlocal(&histogram, &params, masses[u], masses[v])?,
            response_nonlocal(modal, u, v, masses[u], masses[v]),
        ),
    };
    run.attach_diagnostics(&truth);

    let lambdas: Vec<f64> = truth.iter().map(|t| t.0).collect();
    let top = lambdas.iter().chain(run.lambdas().iter()).cloned().fold(0.0, f64::max);
    let mut poles = lambdas;
    poles.extend(run.lambdas());
    let clearance = (4.0 * tol.epsilon).max(0.05 * top.max(1.0));
    let grid = pole_free_grid(0.0, (1.25 * top).sqrt().max(1.0), config.grid_points, &poles, clearance);
    let comparison = compare_response(&run, &exact, &grid, tol.epsilon, tol.delta)?;

    let mut failures = Vec::new();
    if run.modes.len() != truth.len() {
        failures.push(format!("recovered {} poles, expected {}", run.modes.len(), truth.len()));
    }
    failures.extend(run.warnings.iter().cloned());
    for d in run.diagnostics.iter().flatten() {
        if d.lambda_err > tol.epsilon {
            failures.push(format!("eigenvalue {} off by {:.3e} > epsilon", d.lambda_true, d.lambda_err));
        }
        if d.weight_err > tol.delta {
            failures.push(format!("weight at eigenvalue {} off by {:.3e} > delta", d.lambda_true, d.weight_err));
        }
        if config.v.is_some() && d.weight_true.abs() > tol.delta && d.weight_true.signum() != d.weight_est.signum() {
            failures.push(format!("sign of the product at eigenvalue {} is wrong", d.lambda_true));
        }
    }
    if comparison.budget_violations > 0 {
        failures.push(format!("{} grid points exceed the error budget", comparison.budget_violations));
    }

    let shots = samples.len();
    Ok(PipelineReport {
        config: config.clone(),
        sizing,
        shots,
        queries_per_shot,
        total_queries: queries_per_shot * shots as u64,
        qubits,
        samples,
        histogram,
        run,
        exact,
        grid,
        comparison,
        failures,
        seconds: start.elapsed().as_secs_f64(),
    })
}

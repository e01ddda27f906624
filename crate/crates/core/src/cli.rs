//! Command-line front end. Vertex ids on the command line are 1-based, like
//! the problem files.
//!
//! Exit codes: 0 success, 2 invalid input, 3 infeasible size, 4 estimates
//! outside their tolerances, 1 anything else.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::blockenc::EncodedMatrix;
use crate::classical::{diagonalize, response_local, response_nonlocal, PoleGuard};
use crate::error::{Error, Result};
use crate::estimator::{pole_free_grid, Tolerances};
use crate::gluedtrees::{generate, solve, GluedBackend, GluedTreesConfig};
use crate::network::{build_matrices, OscillatorNetwork};
use crate::pipeline::{estimate_from_samples, run_pipeline, PipelineConfig, PipelineReport};
use crate::qpe::{run_qpe, run_qpe_nonlocal, Backend, PhaseSample, QpeConfig, QpeProblem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_FEASIBILITY: i32 = 3;
pub const EXIT_QUALITY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "oscqpe", version, about = "Phase-estimation response functions for oscillator networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a problem file and print s, ||H||_max and alpha.
    Validate {
        #[arg(long)]
        problem: PathBuf,
        /// Also diagonalise and report eigenvalues and gaps.
        #[arg(long)]
        with_spectrum: bool,
    },
    /// Exact eigenvalues, weights and response curve.
    ClassicalSolve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value_t = 1)]
        vertex: usize,
        #[arg(long)]
        nonlocal: Option<usize>,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample phase estimation and write the shots.
    QpeSample {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        vertex: usize,
        #[arg(long)]
        nonlocal: Option<usize>,
        /// Phase register width.
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        shots: usize,
        #[arg(long, value_enum, default_value_t = BackendArg::Analytic)]
        backend: BackendArg,
        #[arg(long, default_value_t = 12)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate eigenvalues and weights from recorded shots.
    Estimate {
        #[arg(long)]
        problem: PathBuf,
        /// `samples.csv` written by `qpe-sample`; its sidecar is the same
        /// path with a `.json` extension.
        #[arg(long)]
        samples: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
        #[arg(long)]
        blind: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Size, sample, estimate and compare in one go.
    Pipeline {
        #[arg(long, required_unless_present = "manifest")]
        problem: Option<PathBuf>,
        #[arg(long, required_unless_present = "manifest")]
        vertex: Option<usize>,
        #[arg(long)]
        nonlocal: Option<usize>,
        #[command(flatten)]
        tol: TolArgs,
        #[arg(long, value_enum, default_value_t = BackendArg::Analytic)]
        backend: BackendArg,
        #[arg(long, default_value_t = 12)]
        r: usize,
        #[arg(long)]
        shots_override: Option<usize>,
        /// Phase register width above the sizing minimum.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Encode cos(2 pi Q / M) H to keep edge eigenvalues inside the window guard.
        #[arg(long)]
        rescale: bool,
        #[arg(long)]
        blind: bool,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Re-run the configuration recorded in a manifest.
        #[arg(long, conflicts_with_all = ["problem", "vertex"])]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// EXIT search on a random glued-trees graph.
    Gluedtrees {
        #[arg(long)]
        nc: usize,
        #[arg(long, default_value_t = 1000)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        gamma: usize,
        #[arg(long, value_enum, default_value_t = GluedArg::Reduced)]
        backend: GluedArg,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::Args)]
struct TolArgs {
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0.05)]
    zeta: f64,
}

impl TolArgs {
    fn build(self) -> Result<Tolerances> {
        Tolerances::new(self.epsilon, self.delta, self.zeta)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Analytic,
    Dense,
    Circuit,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Analytic => Backend::Analytic,
            BackendArg::Dense => Backend::Dense,
            BackendArg::Circuit => Backend::Circuit,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GluedArg {
    Reduced,
    Full,
}

/// Maps an error onto the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_validation() => EXIT_VALIDATION,
        Error::Io(_) => EXIT_VALIDATION,
        Error::Infeasible { .. } | Error::NotEncodable { .. } => EXIT_FEASIBILITY,
        Error::Quality(_) | Error::WindowGuard { .. } => EXIT_QUALITY,
        _ => EXIT_INTERNAL,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Validate { problem, with_spectrum } => validate(&problem, with_spectrum),
        Command::ClassicalSolve { problem, vertex, nonlocal, points, out } => {
            classical_solve(&problem, vertex, nonlocal, points, &out)
        }
        Command::QpeSample { problem, vertex, nonlocal, m, shots, backend, r, seed, out } => {
            qpe_sample(&problem, vertex, nonlocal, m, shots, backend.into(), r, seed, &out)
        }
        Command::Estimate { problem, samples, tol, blind, out } => estimate(&problem, &samples, tol.build()?, blind, &out),
        Command::Pipeline {
            problem,
            vertex,
            nonlocal,
            tol,
            backend,
            r,
            shots_override,
            m,
            seed,
            rescale,
            blind,
            points,
            manifest,
            out,
        } => {
            if let Some(path) = manifest {
                let recorded: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
                return pipeline(&recorded.problem.path, recorded.config, &out);
            }
            let (problem, vertex) = (problem.expect("required by clap"), vertex.expect("required by clap"));
            let net = OscillatorNetwork::from_json_file(&problem)?;
            let mut config = PipelineConfig::new(zero_based(vertex, net.len())?, tol.build()?);
            config.v = nonlocal.map(|v| zero_based(v, net.len())).transpose()?;
            config.backend = backend.into();
            config.angle_bits = r;
            config.shots_override = shots_override;
            config.m_override = m;
            config.seed = seed;
            config.rescale = rescale;
            config.blind = blind;
            config.grid_points = points;
            pipeline(&problem, config, &out)
        }
        Command::Gluedtrees { nc, shots, seed, gamma, backend, out } => {
            let backend = match backend {
                GluedArg::Reduced => GluedBackend::Reduced,
                GluedArg::Full => GluedBackend::Full,
            };
            gluedtrees(GluedTreesConfig { n_c: nc, gamma, shots, seed, backend }, out.as_deref())
        }
    }
}

fn zero_based(vertex: usize, size: usize) -> Result<usize> {
    if vertex == 0 || vertex > size {
        return Err(Error::VertexOutOfRange { vertex, size });
    }
    Ok(vertex - 1)
}

/// Fixed 17-significant-digit formatting for CSV output.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with sorted keys.
fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let v: Value = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    print!("{}", to_json(value)?);
    Ok(())
}

fn validate(problem: &Path, with_spectrum: bool) -> Result<i32> {
    let net = OscillatorNetwork::from_json_file(problem)?;
    let sys = build_matrices(&net);
    let mut report = json!({
        "oscillators": net.len(),
        "edges": net.edges().count(),
        "sparsity": sys.sparsity,
        "max_norm": sys.max_norm,
        "alpha": sys.alpha,
        "norm_bound": sys.norm_bound(),
    });
    if with_spectrum {
        let modal = diagonalize(&sys)?;
        report["eigenvalues"] = json!(modal.eigenvalues);
        report["global_gap"] = json!(modal.global_gap);
        report["vertex_gaps"] = json!(modal.vertex_gaps);
    }
    print_json(&report)?;
    Ok(EXIT_OK)
}

fn classical_solve(problem: &Path, vertex: usize, nonlocal: Option<usize>, points: usize, out: &Path) -> Result<i32> {
    let net = OscillatorNetwork::from_json_file(problem)?;
    let u = zero_based(vertex, net.len())?;
    let v = nonlocal.map(|v| zero_based(v, net.len())).transpose()?;
    let modal = diagonalize(&build_matrices(&net))?;
    fs::create_dir_all(out)?;
    write_csv(
        &out.join("eigenvalues.csv"),
        &["mode", "lambda"],
        modal.eigenvalues.iter().enumerate().map(|(j, l)| vec![(j + 1).to_string(), fmt(*l)]),
    )?;
    let n = net.len();
    write_csv(
        &out.join("weights.csv"),
        &["vertex", "mode", "weight"],
        (0..n).flat_map(|w| {
            let modal = &modal;
            (0..n).map(move |j| vec![(w + 1).to_string(), (j + 1).to_string(), fmt(modal.modes[(w, j)].powi(2))])
        }),
    )?;
    let masses = net.masses();
    let response = match v {
        None => response_local(&modal, u, masses[u]),
        Some(v) => response_nonlocal(&modal, u, v, masses[u], masses[v]),
    };
    let top = modal.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let grid = pole_free_grid(0.0, (1.25 * top).sqrt().max(1.0), points, &modal.eigenvalues, 1e-3 * top.max(1.0));
    let g = response.evaluate_frequencies(&grid, PoleGuard::default())?;
    write_csv(
        &out.join("response.csv"),
        &["omega", "re", "im"],
        grid.iter().zip(&g).map(|(w, z)| vec![fmt(*w), fmt(z.re), fmt(z.im)]),
    )?;
    print_json(&json!({ "eigenvalues": modal.eigenvalues, "global_gap": modal.global_gap, "out": out }))?;
    Ok(EXIT_OK)
}

/// JSON sidecar of `samples.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub config: QpeConfig,
    pub seed: u64,
    pub queries_per_shot: u64,
    pub total_queries: u64,
    pub qubits: usize,
    pub norm_bound: f64,
    pub problem_sha256: String,
}

fn write_samples(path: &Path, samples: &[PhaseSample]) -> Result<()> {
    write_csv(
        path,
        &["shot", "h", "x"],
        samples.iter().enumerate().map(|(i, s)| vec![i.to_string(), s.h.to_string(), s.x.to_string()]),
    )
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    #[allow(dead_code)]
    shot: usize,
    h: u8,
    x: usize,
}

fn read_samples(path: &Path) -> Result<Vec<PhaseSample>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<SampleRow>().map(|row| row.map(|s| PhaseSample { h: s.h, x: s.x }).map_err(Error::from)).collect()
}

#[allow(clippy::too_many_arguments)]
fn qpe_sample(
    problem: &Path,
    vertex: usize,
    nonlocal: Option<usize>,
    m: usize,
    shots: usize,
    backend: Backend,
    r: usize,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    let text = fs::read(problem)?;
    let net = OscillatorNetwork::from_json_str(&String::from_utf8_lossy(&text))?;
    let u = zero_based(vertex, net.len())?;
    let v = nonlocal.map(|v| zero_based(v, net.len())).transpose()?;
    let qp = QpeProblem::new(EncodedMatrix::from_system(&build_matrices(&net))?)?;
    let config = QpeConfig { m, u, v, shots, backend, seed, angle_bits: r };
    let run = match v {
        None => run_qpe(&qp, &config)?,
        Some(_) => run_qpe_nonlocal(&qp, &config)?,
    };
    fs::create_dir_all(out)?;
    write_samples(&out.join("samples.csv"), &run.samples)?;
    let sidecar = SampleSidecar {
        config,
        seed,
        queries_per_shot: run.queries_per_shot,
        total_queries: run.queries_per_shot * shots as u64,
        qubits: run.qubits,
        norm_bound: qp.bound(),
        problem_sha256: sha256_hex(&text),
    };
    fs::write(out.join("samples.json"), to_json(&sidecar)?)?;
    print_json(&sidecar)?;
    Ok(EXIT_OK)
}

fn estimate(problem: &Path, samples: &Path, tol: Tolerances, blind: bool, out: &Path) -> Result<i32> {
    let net = OscillatorNetwork::from_json_file(problem)?;
    let sidecar: SampleSidecar = serde_json::from_str(&fs::read_to_string(samples.with_extension("json"))?)?;
    let shots = read_samples(samples)?;
    let q = &sidecar.config;
    let mut config = PipelineConfig::new(q.u, tol);
    config.v = q.v;
    config.backend = q.backend;
    config.angle_bits = q.angle_bits;
    config.seed = q.seed;
    config.m_override = Some(q.m);
    config.blind = blind;
    let report = estimate_from_samples(&net, &config, shots, sidecar.queries_per_shot, sidecar.qubits)?;
    fs::create_dir_all(out)?;
    write_estimates(&report, out)?;
    finish_report(&report)
}

/// `response.csv`, `modes.csv` and `sizing.json`; returns the file names.
fn write_estimates(report: &PipelineReport, out: &Path) -> Result<Vec<&'static str>> {
    let g = report.run.response.evaluate_frequencies(&report.grid, PoleGuard::default())?;
    write_csv(
        &out.join("response.csv"),
        &["omega", "re", "im", "abs"],
        report.grid.iter().zip(&g).map(|(w, z)| vec![fmt(*w), fmt(z.re), fmt(z.im), fmt(z.norm())]),
    )?;
    write_csv(
        &out.join("modes.csv"),
        &["lambda_est", "weight_est", "lambda_true", "weight_true", "lambda_err", "weight_err"],
        report.run.diagnostics.iter().flatten().map(|d| {
            vec![fmt(d.lambda_est), fmt(d.weight_est), fmt(d.lambda_true), fmt(d.weight_true), fmt(d.lambda_err), fmt(d.weight_err)]
        }),
    )?;
    fs::write(out.join("sizing.json"), to_json(&report.sizing)?)?;
    Ok(vec!["response.csv", "modes.csv", "sizing.json"])
}

fn summary(report: &PipelineReport) -> Value {
    json!({
        "m": report.sizing.m_chosen,
        "q": report.sizing.q,
        "shots": report.shots,
        "queries_per_shot": report.queries_per_shot,
        "total_queries": report.total_queries,
        "qubits": report.qubits,
        "modes": report.run.modes.len(),
        "max_abs_error": report.comparison.max_abs_error,
        "failures": report.failures,
        "pass": report.passed(),
    })
}

fn finish_report(report: &PipelineReport) -> Result<i32> {
    print_json(&summary(report))?;
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        for f in &report.failures {
            eprintln!("quality: {f}");
        }
        Ok(EXIT_QUALITY)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestProblem {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of a pipeline run: enough to replay it and check its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub problem: ManifestProblem,
    pub config: PipelineConfig,
    pub seed: u64,
    pub sizing: crate::estimator::SizingReport,
    pub shots: usize,
    pub queries_per_shot: u64,
    pub total_queries: u64,
    pub qubits: usize,
    pub wall_clock_seconds: f64,
    pub pass: bool,
    /// File name to SHA-256 of its contents.
    pub outputs: std::collections::BTreeMap<String, String>,
}

fn pipeline(problem: &Path, config: PipelineConfig, out: &Path) -> Result<i32> {
    let start = Instant::now();
    let text = fs::read(problem)?;
    let net = OscillatorNetwork::from_json_str(&String::from_utf8_lossy(&text))?;
    let report = run_pipeline(&net, &config)?;
    fs::create_dir_all(out)?;
    write_samples(&out.join("samples.csv"), &report.samples)?;
    let mut files = vec!["samples.csv"];
    files.extend(write_estimates(&report, out)?);
    let mut outputs = std::collections::BTreeMap::new();
    for f in files {
        outputs.insert(f.to_string(), sha256_hex(&fs::read(out.join(f))?));
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        problem: ManifestProblem { path: problem.to_path_buf(), sha256: sha256_hex(&text) },
        seed: config.seed,
        config,
        sizing: report.sizing.clone(),
        shots: report.shots,
        queries_per_shot: report.queries_per_shot,
        total_queries: report.total_queries,
        qubits: report.qubits,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        pass: report.passed(),
        outputs,
    };
    fs::write(out.join("manifest.json"), to_json(&manifest)?)?;
    finish_report(&report)
}

fn gluedtrees(config: GluedTreesConfig, out: Option<&Path>) -> Result<i32> {
    let inst = generate(config.n_c, config.seed)?;
    let report = solve(&inst, &config)?;
    let text = to_json(&json!({ "config": config, "report": report }))?;
    if let Some(path) = out {
        fs::write(path, &text)?;
    }
    print!("{text}");
    Ok(if report.pass { EXIT_OK } else { EXIT_QUALITY })
}

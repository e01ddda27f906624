//! Post-processing of phase-estimation histograms into eigenvalue and
//! weight estimates, register sizing, and response reconstruction.
//!
//! Histograms are folded onto `0..=M/2` by adding each bin to its mirror
//! `M - x`, so the `+phi` and `-phi` peaks of one eigenvalue are read
//! together. A weight is the folded mass in the `2Q` bins
//! `anchor - Q .. anchor + Q - 1`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::blockenc::EncodedMatrix;
use crate::classical::{ModalData, PoleGuard, PoleTerm, ResponseFunction};
use crate::error::{Error, Result};
use crate::qpe::{query_formula, PhaseDistribution};

/// Additive eigenvalue tolerance `epsilon`, weight tolerance `delta` and
/// failure probability `zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub epsilon: f64,
    pub delta: f64,
    pub zeta: f64,
}

impl Tolerances {
    pub fn new(epsilon: f64, delta: f64, zeta: f64) -> Result<Self> {
        let t = Tolerances { epsilon, delta, zeta };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Tolerance(format!("epsilon = {} must be positive", self.epsilon)));
        }
        for (name, x) in [("delta", self.delta), ("zeta", self.zeta)] {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::Tolerance(format!("{name} = {x} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// `ceil` that ignores floating-point fuzz just above an integer.
fn ceil_exact(x: f64) -> f64 {
    (x - 1e-9).ceil()
}

/// Register sizes and sample count for one vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingReport {
    /// Resolution needed for the eigenvalue tolerance.
    pub m_min1: usize,
    /// Resolution needed to separate the peaks by `2Q` bins.
    pub m_min2: usize,
    pub m_chosen: usize,
    pub q: usize,
    pub n_samples: usize,
    /// `N_S * 6 (2^m - 1)`.
    pub predicted_queries: u64,
    /// Number of distinct eigenvalues expected at the vertex.
    pub n_u: usize,
    /// `s ||H||_max`.
    pub norm_bound: f64,
    /// Smallest eigenvalue gap at the vertex, if it has more than one.
    pub gap: Option<f64>,
    pub tolerances: Tolerances,
}

impl SizingReport {
    pub fn big_m(&self) -> usize {
        1 << self.m_chosen
    }

    /// Same report with a larger phase register.
    pub fn with_phase_bits(&self, m: usize) -> Result<Self> {
        let need = self.m_min1.max(self.m_min2);
        if m < need || 2 * self.q + 1 > 1 << m {
            return Err(Error::Argument(format!("m = {m} is below the required {need}")));
        }
        let mut out = self.clone();
        out.m_chosen = m;
        out.predicted_queries = self.n_samples as u64 * query_formula(m);
        Ok(out)
    }
}

/// Chooses `m`, `Q` and `N_S`:
///
/// * `m_min1 = ceil(log2(pi s||H|| / epsilon))`
/// * `m_min2 = ceil(log2(4 pi s||H|| / (delta gap)))`
/// * `Q = ceil(1 / delta)`, with `m` raised until `2Q <= M - 1`
/// * `N_S = ceil(ln(2 N_u / zeta) / (2 delta^2))`
pub fn size_registers(norm_bound: f64, gap: Option<f64>, n_u: usize, tol: Tolerances) -> Result<SizingReport> {
    tol.validate()?;
    if tol.epsilon >= norm_bound {
        return Err(Error::Tolerance(format!(
            "epsilon = {} is not below s ||H||_max = {norm_bound}",
            tol.epsilon
        )));
    }
    if let Some(g) = gap {
        if !(g > 0.0) {
            return Err(Error::Tolerance(format!("eigenvalue gap {g} must be positive")));
        }
    }
    let n_u = n_u.max(1);
    let m_min1 = ceil_exact((PI * norm_bound / tol.epsilon).log2()).max(0.0) as usize;
    let m_min2 = match gap {
        Some(g) => ceil_exact((4.0 * PI * norm_bound / (tol.delta * g)).log2()).max(0.0) as usize,
        None => 0,
    };
    let q = ceil_exact(1.0 / tol.delta) as usize;
    let mut m = m_min1.max(m_min2).max(1);
    while 2 * q + 1 > 1 << m {
        m += 1;
    }
    let n_samples = ceil_exact((2.0 * n_u as f64 / tol.zeta).ln() / (2.0 * tol.delta * tol.delta)) as usize;
    Ok(SizingReport {
        m_min1,
        m_min2,
        m_chosen: m,
        q,
        n_samples,
        predicted_queries: n_samples as u64 * query_formula(m),
        n_u,
        norm_bound,
        gap,
        tolerances: tol,
    })
}

/// `F(x) = P(x) + P(M - x)` on `0..=M/2`, with `F(0) = P(0)` and
/// `F(M/2) = P(M/2)`.
pub fn fold(p: &[f64]) -> Vec<f64> {
    let mm = p.len();
    let half = mm / 2;
    (0..=half)
        .map(|x| if x == 0 || x == half { p[x] } else { p[x] + p[mm - x] })
        .collect()
}

/// A recovered peak on the folded histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Folded bin with the largest mass.
    pub bin: usize,
    /// Mass-weighted centre of the window around `bin`.
    pub centroid: f64,
    /// `ceil(centroid)`, the window anchor.
    pub anchor: usize,
}

/// Result of [`find_peaks`]; `warning` is set when fewer peaks than
/// requested were found.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSearch {
    pub peaks: Vec<Peak>,
    pub warning: Option<String>,
}

/// How many peaks to look for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeakCount {
    /// Exactly this many (the vertex's `N_u`).
    Known(usize),
    /// As many as have window mass above the threshold.
    Blind { threshold: f64 },
}

/// Greedy peak search on the folded histogram: local maxima by descending
/// mass (ties to the lower bin), each accepted peak suppressing every bin
/// closer than `2Q`. Peaks are returned sorted by bin.
pub fn find_peaks(p: &[f64], count: PeakCount, q: usize) -> PeakSearch {
    let f = fold(p);
    let last = f.len() - 1;
    let mut candidates: Vec<usize> = (0..=last)
        .filter(|&x| {
            let left = if x > 0 { f[x - 1] } else { f64::NEG_INFINITY };
            let right = if x < last { f[x + 1] } else { f64::NEG_INFINITY };
            f[x] > 0.0 && f[x] >= left && f[x] >= right
        })
        .collect();
    candidates.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));

    let mut peaks: Vec<Peak> = Vec::new();
    for x in candidates {
        if let PeakCount::Known(n) = count {
            if peaks.len() == n {
                break;
            }
        }
        if peaks.iter().any(|pk| pk.bin.abs_diff(x) < 2 * q) {
            continue;
        }
        let lo = x.saturating_sub(q);
        let hi = (x + q).min(last);
        let mass: f64 = f[lo..=hi].iter().sum();
        let centroid = if mass > 0.0 {
            (lo..=hi).map(|y| y as f64 * f[y]).sum::<f64>() / mass
        } else {
            x as f64
        };
        let anchor = ceil_exact(centroid).max(0.0) as usize;
        let peak = Peak { bin: x, centroid, anchor };
        if let PeakCount::Blind { threshold } = count {
            let lo = anchor.saturating_sub(q);
            let hi = (anchor + q).saturating_sub(1).min(last);
            let window: f64 = f[lo..=hi].iter().sum();
            if window <= threshold {
                continue;
            }
        }
        peaks.push(peak);
    }
    peaks.sort_by_key(|pk| pk.bin);
    let warning = match count {
        PeakCount::Known(n) if peaks.len() < n => Some(format!(
            "found {} of {n} peaks at separation {}; returning the partial list",
            peaks.len(),
            2 * q
        )),
        PeakCount::Blind { .. } if peaks.is_empty() => Some("no peak above the mass threshold".into()),
        _ => None,
    };
    PeakSearch { peaks, warning }
}

/// `lambda = s ||H||_max cos(2 pi phi / M)`.
pub fn invert_phase(phi: f64, norm_bound: f64, m: usize) -> f64 {
    norm_bound * (2.0 * PI * phi / (1u64 << m) as f64).cos()
}

fn window_sum(f: &[f64], peak: &Peak, q: usize, m: usize) -> Result<f64> {
    let half = f.len() - 1;
    if peak.anchor < q || peak.anchor + q - 1 > half {
        return Err(Error::WindowGuard { phase: peak.centroid, q, m });
    }
    Ok(f[peak.anchor - q..peak.anchor + q].iter().sum())
}

/// `W^2 = sum_{q=-Q}^{Q-1} F(anchor + q)`: the two mirror windows added, so
/// each contributes its own half instead of one being doubled.
pub fn estimate_weights(p: &[f64], peaks: &[Peak], q: usize) -> Result<Vec<f64>> {
    let m = p.len().trailing_zeros() as usize;
    let f = fold(p);
    peaks.iter().map(|pk| window_sum(&f, pk, q, m)).collect()
}

/// Signed products `W_uj W_vj = sum_window [F_0 - F_1]` from a joint
/// Hadamard-test histogram.
pub fn estimate_products(joint: &PhaseDistribution, peaks: &[Peak], q: usize) -> Result<Vec<f64>> {
    if !joint.joint {
        return Err(Error::Argument("product estimation needs a joint (h, x) histogram".into()));
    }
    let f0 = fold(joint.slice(0));
    let f1 = fold(joint.slice(1));
    peaks
        .iter()
        .map(|pk| Ok(window_sum(&f0, pk, q, joint.m)? - window_sum(&f1, pk, q, joint.m)?))
        .collect()
}

/// One recovered pole of the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub lambda: f64,
    /// `W_uj^2` locally, `W_uj W_vj` for a nonlocal run.
    pub weight: f64,
    pub peak: Peak,
}

/// Estimate against the closest classical eigenvalue group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDiagnostic {
    pub lambda_est: f64,
    pub weight_est: f64,
    pub lambda_true: f64,
    pub weight_true: f64,
    pub lambda_err: f64,
    pub weight_err: f64,
}

/// Settings shared by local and nonlocal estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateParams {
    pub m: usize,
    pub q: usize,
    pub norm_bound: f64,
    /// Factor `c` the encoded matrix was multiplied by; estimates are
    /// divided by it.
    pub scale: f64,
    pub count: PeakCount,
}

impl EstimateParams {
    pub fn from_sizing(sizing: &SizingReport, count: PeakCount) -> Self {
        EstimateParams { m: sizing.m_chosen, q: sizing.q, norm_bound: sizing.norm_bound, scale: 1.0, count }
    }
}

/// Estimates and reconstructed response of one vertex (or vertex pair).
#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub modes: Vec<ModeEstimate>,
    pub response: ResponseFunction,
    pub warnings: Vec<String>,
    pub diagnostics: Option<Vec<ModeDiagnostic>>,
}

impl EstimationRun {
    pub fn lambdas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.weight).collect()
    }

    /// Compares against classical group data: `truth` holds
    /// `(eigenvalue, weight)` per group; each estimate is matched to the
    /// closest eigenvalue.
    pub fn attach_diagnostics(&mut self, truth: &[(f64, f64)]) {
        let diags = self
            .modes
            .iter()
            .map(|m| {
                let &(lt, wt) = truth
                    .iter()
                    .min_by(|a, b| (a.0 - m.lambda).abs().total_cmp(&(b.0 - m.lambda).abs()))
                    .unwrap_or(&(f64::NAN, f64::NAN));
                ModeDiagnostic {
                    lambda_est: m.lambda,
                    weight_est: m.weight,
                    lambda_true: lt,
                    weight_true: wt,
                    lambda_err: (m.lambda - lt).abs(),
                    weight_err: (m.weight - wt).abs(),
                }
            })
            .collect();
        self.diagnostics = Some(diags);
    }
}

fn build_run(peaks: PeakSearch, weights: Vec<f64>, params: &EstimateParams, mass_scale: f64) -> EstimationRun {
    let modes: Vec<ModeEstimate> = peaks
        .peaks
        .into_iter()
        .zip(weights)
        .map(|(peak, weight)| ModeEstimate {
            lambda: invert_phase(peak.bin as f64, params.norm_bound, params.m) / params.scale,
            weight,
            peak,
        })
        .collect();
    let response = reconstruct_response(&modes, mass_scale);
    EstimationRun { modes, response, warnings: peaks.warning.into_iter().collect(), diagnostics: None }
}

/// Eigenvalues and weights at one vertex from a phase histogram.
pub fn estimate_local(hist: &PhaseDistribution, params: &EstimateParams, mass: f64) -> Result<EstimationRun> {
    check_hist(hist, params)?;
    let peaks = find_peaks(&hist.probabilities, params.count, params.q);
    let weights = estimate_weights(&hist.probabilities, &peaks.peaks, params.q)?;
    Ok(build_run(peaks, weights, params, 1.0 / mass))
}

/// Eigenvalues and signed products from a joint Hadamard-test histogram.
pub fn estimate_nonlocal(hist: &PhaseDistribution, params: &EstimateParams, mass_u: f64, mass_v: f64) -> Result<EstimationRun> {
    check_hist(hist, params)?;
    let peaks = find_peaks(&hist.phase_marginal(), params.count, params.q);
    let products = estimate_products(hist, &peaks.peaks, params.q)?;
    Ok(build_run(peaks, products, params, 1.0 / (mass_u * mass_v).sqrt()))
}

fn check_hist(hist: &PhaseDistribution, params: &EstimateParams) -> Result<()> {
    if hist.m != params.m {
        return Err(Error::Dimension(format!("histogram has m = {}, expected {}", hist.m, params.m)));
    }
    if !(params.scale > 0.0 && params.scale <= 1.0) {
        return Err(Error::Argument(format!("scale {} outside (0, 1]", params.scale)));
    }
    Ok(())
}

/// `G(l) = mass_scale * sum_j w_j / (lambda_j + l^2)` from estimates.
pub fn reconstruct_response(modes: &[ModeEstimate], mass_scale: f64) -> ResponseFunction {
    ResponseFunction {
        terms: modes.iter().map(|m| PoleTerm { eigenvalue: m.lambda, weight: m.weight }).collect(),
        mass_scale,
    }
}

/// `cos(2 pi Q / M)`: the factor that keeps the extreme eigenvalues
/// `+- s ||H||_max` at least `Q` bins away from the folded edges.
pub fn rescale_factor(q: usize, m: usize) -> f64 {
    (2.0 * PI * q as f64 / (1u64 << m) as f64).cos()
}

/// Encodes `c H` with `c` from [`rescale_factor`] when `rescale` is set.
pub fn maybe_rescale(enc: &EncodedMatrix, q: usize, m: usize, rescale: bool) -> Result<(EncodedMatrix, f64)> {
    if !rescale {
        return Ok((enc.clone(), 1.0));
    }
    let c = rescale_factor(q, m);
    Ok((enc.scaled(c)?, c))
}

/// Worst-case `|G_est(i omega) - G_true(i omega)|` given eigenvalue error
/// at most `eps` and weight error at most `delta` per mode. Infinite where
/// some estimated pole is within `eps` of `omega^2`.
pub fn error_budget(modes: &[ModeEstimate], mass_scale: f64, eps: f64, delta: f64, omega: f64) -> f64 {
    let w2 = omega * omega;
    mass_scale
        * modes
            .iter()
            .map(|m| {
                let d = (m.lambda - w2).abs();
                if d <= eps {
                    return f64::INFINITY;
                }
                // |W/(l - w) - W~/(l~ - w)| <= |W - W~|/|l - w| + |W~| |l - l~| / (|l - w| |l~ - w|)
                delta / (d - eps) + m.weight.abs() * eps / ((d - eps) * d)
            })
            .sum::<f64>()
}

/// `n` frequencies spread evenly over `[lo, hi]` while keeping `omega^2` at
/// least `clearance` away from every pole.
pub fn pole_free_grid(lo: f64, hi: f64, n: usize, poles: &[f64], clearance: f64) -> Vec<f64> {
    let fine = 200 * n.max(1);
    let ok: Vec<f64> = (0..=fine)
        .map(|k| lo + (hi - lo) * k as f64 / fine as f64)
        .filter(|w| poles.iter().all(|&p| (p - w * w).abs() >= clearance))
        .collect();
    if ok.len() <= n {
        return ok;
    }
    (0..n).map(|k| ok[k * (ok.len() - 1) / (n - 1).max(1)]).collect()
}

/// Deviation of an estimated response from the classical one on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseComparison {
    pub points: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Grid points where `|G_est - G_true|` exceeds the budget.
    pub budget_violations: usize,
}

pub fn compare_response(
    estimated: &EstimationRun,
    exact: &ResponseFunction,
    omegas: &[f64],
    eps: f64,
    delta: f64,
) -> Result<ResponseComparison> {
    let guard = PoleGuard::default();
    let g_est = estimated.response.evaluate_frequencies(omegas, guard)?;
    let g_true = exact.evaluate_frequencies(omegas, guard)?;
    let mut out = ResponseComparison { points: omegas.len(), max_abs_error: 0.0, max_rel_error: 0.0, budget_violations: 0 };
    for ((w, a), b) in omegas.iter().zip(&g_est).zip(&g_true) {
        let err = (a - b).norm();
        out.max_abs_error = out.max_abs_error.max(err);
        if b.norm() > 0.0 {
            out.max_rel_error = out.max_rel_error.max(err / b.norm());
        }
        if err > error_budget(&estimated.modes, estimated.response.mass_scale, eps, delta, *w) {
            out.budget_violations += 1;
        }
    }
    Ok(out)
}

/// Group eigenvalues with their summed weights at `u`, keeping only the
/// supported ones.
pub fn classical_truth_local(modal: &ModalData, u: usize, support_tol: f64) -> Vec<(f64, f64)> {
    modal
        .groups
        .iter()
        .zip(modal.group_weights(u))
        .filter(|(_, w)| *w > support_tol)
        .map(|(g, w)| (g.value, w))
        .collect()
}

/// Group eigenvalues with summed products `W_uj W_vj`, for groups
/// supported at `u` or `v`.
pub fn classical_truth_nonlocal(modal: &ModalData, u: usize, v: usize, support_tol: f64) -> Vec<(f64, f64)> {
    let wu = modal.group_weights(u);
    let wv = modal.group_weights(v);
    modal
        .groups
        .iter()
        .zip(modal.group_products(u, v))
        .enumerate()
        .filter(|(k, _)| wu[*k] > support_tol || wv[*k] > support_tol)
        .map(|(_, (g, p))| (g.value, p))
        .collect()
}

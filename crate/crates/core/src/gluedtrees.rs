//! Random glued trees: two balanced binary trees of `n_c` columns whose leaf
//! columns are joined by a random cycle. Starting from the ENTRANCE root,
//! phase estimation of the adjacency walk followed by a computational-basis
//! measurement finds the EXIT root with probability `Theta(1 / n_c)`.
//!
//! The walk never leaves the `2 n_c`-dimensional span of the uniform column
//! states, so the search is simulated there; the full vertex space is only
//! used to check the reduction on small instances.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blockenc::{DenseWalk, EncodedMatrix};
use crate::classical::jacobi_eigen;
use crate::error::{Error, Result};
use crate::qpe::query_formula;
use crate::rng::stream_rng;
use crate::simulator::check_qubit_budget;

/// `s ||A||_max` for a glued-trees adjacency matrix.
pub const NORM_BOUND: f64 = 3.0;

/// Largest `n_c` the full vertex-space backend accepts.
pub const FULL_SPACE_MAX_NC: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GluedTreesInstance {
    pub n_c: usize,
    /// Sorted neighbour lists.
    pub neighbors: Vec<Vec<usize>>,
    /// Vertex labels of each of the `2 n_c` columns, left to right.
    pub columns: Vec<Vec<usize>>,
    pub entrance: usize,
    /// Used only to score the solver.
    pub exit: usize,
}

/// `2 (2^n_c - 1)`.
pub fn vertex_count(n_c: usize) -> usize {
    2 * ((1 << n_c) - 1)
}

/// Builds a random instance. Leaves are glued along a random cycle that
/// alternates between the two trees, so each leaf gets exactly two partners
/// on the other side; all labels are then shuffled.
pub fn generate(n_c: usize, seed: u64) -> Result<GluedTreesInstance> {
    if n_c < 2 {
        return Err(Error::Argument(format!("n_c = {n_c}: glued trees need at least 2 columns")));
    }
    if n_c > 20 {
        return Err(Error::Infeasible { required: n_c, limit: 20 });
    }
    let mut rng = stream_rng(seed, 0);
    let total = vertex_count(n_c);
    let half = total / 2;
    // canonical labels: left tree in heap order 0..half, right tree mirrored
    let mut edges = Vec::with_capacity(total + total / 2);
    for tree in 0..2 {
        for i in 1..half {
            edges.push((tree * half + (i - 1) / 2, tree * half + i));
        }
    }
    let first_leaf = (1 << (n_c - 1)) - 1;
    let mut left: Vec<usize> = (first_leaf..half).collect();
    let mut right: Vec<usize> = (first_leaf..half).map(|i| half + i).collect();
    left.shuffle(&mut rng);
    right.shuffle(&mut rng);
    let k = left.len();
    for i in 0..k {
        edges.push((left[i], right[i]));
        edges.push((right[i], left[(i + 1) % k]));
    }

    let mut label: Vec<usize> = (0..total).collect();
    label.shuffle(&mut rng);
    let mut neighbors = vec![Vec::with_capacity(3); total];
    for (a, b) in edges {
        neighbors[label[a]].push(label[b]);
        neighbors[label[b]].push(label[a]);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    let mut columns = Vec::with_capacity(2 * n_c);
    for j in 0..n_c {
        columns.push(((1 << j) - 1..(1 << (j + 1)) - 1).map(|i| label[i]).collect::<Vec<_>>());
    }
    for j in (0..n_c).rev() {
        columns.push(((1 << j) - 1..(1 << (j + 1)) - 1).map(|i| label[half + i]).collect());
    }
    let inst = GluedTreesInstance { n_c, neighbors, columns, entrance: label[0], exit: label[half] };
    inst.check()?;
    Ok(inst)
}

impl GluedTreesInstance {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    /// Degrees, edge symmetry and the column structure.
    pub fn check(&self) -> Result<()> {
        let n = self.len();
        if n != vertex_count(self.n_c) || self.columns.len() != 2 * self.n_c {
            return Err(Error::Dimension(format!("{n} vertices do not form glued trees with n_c = {}", self.n_c)));
        }
        for (v, list) in self.neighbors.iter().enumerate() {
            let want = if v == self.entrance || v == self.exit { 2 } else { 3 };
            if list.len() != want {
                return Err(Error::Dimension(format!("vertex {v} has degree {}, expected {want}", list.len())));
            }
            if list.windows(2).any(|w| w[0] == w[1]) || list.contains(&v) {
                return Err(Error::Dimension(format!("vertex {v} has a repeated or self edge")));
            }
            if let Some(&w) = list.iter().find(|&&w| self.neighbors[w].binary_search(&v).is_err()) {
                return Err(Error::Dimension(format!("edge ({v}, {w}) is not symmetric")));
            }
        }
        let mut column_of = vec![usize::MAX; n];
        for (j, col) in self.columns.iter().enumerate() {
            for &v in col {
                column_of[v] = j;
            }
        }
        if column_of.contains(&usize::MAX) {
            return Err(Error::Dimension("columns do not cover every vertex".into()));
        }
        for (v, list) in self.neighbors.iter().enumerate() {
            if list.iter().any(|&w| column_of[w].abs_diff(column_of[v]) != 1) {
                return Err(Error::Dimension(format!("vertex {v} links to a non-adjacent column")));
            }
        }
        Ok(())
    }

    /// `A x` for the adjacency matrix.
    pub fn apply_adjacency(&self, x: &[f64]) -> Vec<f64> {
        self.neighbors.iter().map(|list| list.iter().map(|&w| x[w]).sum()).collect()
    }

    /// Dense adjacency matrix (small instances only).
    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| if self.neighbors[i].binary_search(&j).is_ok() { 1.0 } else { 0.0 })
    }

    /// Uniform superposition over column `j` as a vertex-space vector.
    pub fn column_state(&self, j: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        let amp = 1.0 / (self.columns[j].len() as f64).sqrt();
        for &v in &self.columns[j] {
            x[v] = amp;
        }
        x
    }

    /// `max_j ||(I - Pi_col) A |col j>||`.
    pub fn subspace_leak(&self) -> f64 {
        (0..self.columns.len())
            .map(|j| {
                let mut y = self.apply_adjacency(&self.column_state(j));
                for k in 0..self.columns.len() {
                    let c = self.column_state(k);
                    let overlap: f64 = c.iter().zip(&y).map(|(a, b)| a * b).sum();
                    for (yi, ci) in y.iter_mut().zip(&c) {
                        *yi -= overlap * ci;
                    }
                }
                y.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `<col i| A |col j>` computed on the vertex space.
    pub fn projected_adjacency(&self) -> DMatrix<f64> {
        let d = self.columns.len();
        let images: Vec<Vec<f64>> = (0..d).map(|j| self.apply_adjacency(&self.column_state(j))).collect();
        DMatrix::from_fn(d, d, |i, j| self.column_state(i).iter().zip(&images[j]).map(|(a, b)| a * b).sum())
    }
}

/// The adjacency matrix restricted to the column states: tridiagonal with
/// `sqrt 2` off the diagonal except `2` between the two leaf columns.
pub fn column_matrix(n_c: usize) -> DMatrix<f64> {
    let d = 2 * n_c;
    let mut a = DMatrix::zeros(d, d);
    for j in 0..d - 1 {
        let x = if j == n_c - 1 { 2.0 } else { SQRT_2 };
        a[(j, j + 1)] = x;
        a[(j + 1, j)] = x;
    }
    a
}

/// `A_col` with its eigen-decomposition.
#[derive(Debug, Clone)]
pub struct ColumnSystem {
    pub n_c: usize,
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
}

impl ColumnSystem {
    pub fn new(n_c: usize) -> Result<Self> {
        if n_c < 2 {
            return Err(Error::Argument(format!("n_c = {n_c}: glued trees need at least 2 columns")));
        }
        let matrix = column_matrix(n_c);
        let (eigenvalues, eigenvectors) = jacobi_eigen(&matrix)?;
        Ok(ColumnSystem { n_c, matrix, eigenvalues, eigenvectors })
    }

    pub fn dim(&self) -> usize {
        2 * self.n_c
    }

    /// Smallest spacing of the spectrum.
    pub fn exact_gap(&self) -> f64 {
        self.eigenvalues.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// `sum_j |<1|l_j>|^2 |<2 n_c|l_j>|^2 / 2`: EXIT probability with perfect
    /// phase resolution, the `1/2` coming from post-selection on the block
    /// ancillas.
    pub fn exact_exit_probability(&self) -> f64 {
        let last = self.dim() - 1;
        (0..self.dim())
            .map(|j| 0.5 * self.eigenvectors[(0, j)].powi(2) * self.eigenvectors[(last, j)].powi(2))
            .sum()
    }

    /// Probability that phase estimation with `m` bits, post-selected on
    /// zero block ancillas, leaves the walker in column `c`, starting from
    /// the ENTRANCE.
    ///
    /// The ancilla-zero amplitude after `k` walk steps is
    /// `sum_j e_j v_j cos(k theta_j)` with `theta_j = arccos(lambda_j / 3)`;
    /// summed over the phase register this gives
    /// `(1/M) sum_k |sum_j e_j v_j(c) cos(k theta_j)|^2`.
    pub fn qpe_column_probabilities(&self, m: usize) -> Vec<f64> {
        let d = self.dim();
        let theta: Vec<f64> = self.eigenvalues.iter().map(|l| (l / NORM_BOUND).clamp(-1.0, 1.0).acos()).collect();
        let big_m = (1u64 << m) as f64;
        let mut kernel = DMatrix::zeros(d, d);
        for j in 0..d {
            for l in 0..d {
                kernel[(j, l)] = 0.5 * (cosine_mean(theta[j] - theta[l], big_m) + cosine_mean(theta[j] + theta[l], big_m));
            }
        }
        (0..d)
            .map(|c| {
                let a: Vec<f64> = (0..d).map(|j| self.eigenvectors[(0, j)] * self.eigenvectors[(c, j)]).collect();
                (0..d).map(|j| (0..d).map(|l| a[j] * a[l] * kernel[(j, l)]).sum::<f64>()).sum::<f64>()
            })
            .collect()
    }

    /// The same probabilities by stepping the qubitized walk of the
    /// dilation `[[B, S], [S, -B]]`, `B = A_col / 3`, `S = sqrt(1 - B^2)`.
    pub fn qpe_column_probabilities_by_walk(&self, m: usize) -> Vec<f64> {
        let d = self.dim();
        let b = &self.matrix / NORM_BOUND;
        let s_diag: Vec<f64> = self.eigenvalues.iter().map(|l| (1.0 - (l / NORM_BOUND).powi(2)).max(0.0).sqrt()).collect();
        let s = &self.eigenvectors * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s_diag)) * self.eigenvectors.transpose();
        // V = (Z (x) I) U: reflect about ancilla zero after the dilation
        let mut walk = DMatrix::zeros(2 * d, 2 * d);
        walk.view_mut((0, 0), (d, d)).copy_from(&b);
        walk.view_mut((0, d), (d, d)).copy_from(&s);
        walk.view_mut((d, 0), (d, d)).copy_from(&(-&s));
        walk.view_mut((d, d), (d, d)).copy_from(&b);
        let mut state = nalgebra::DVector::zeros(2 * d);
        state[0] = 1.0;
        let mut out = vec![0.0; d];
        let big_m = 1usize << m;
        for _ in 0..big_m {
            for c in 0..d {
                out[c] += state[c] * state[c] / big_m as f64;
            }
            state = &walk * state;
        }
        out
    }
}

/// `(1/M) sum_{k<M} cos(k a)`.
fn cosine_mean(a: f64, big_m: f64) -> f64 {
    let half = 0.5 * a;
    let s = half.sin();
    if s.abs() < 1e-12 {
        return if half.cos() > 0.0 || big_m == 1.0 { 1.0 } else { cosine_mean_direct(a, big_m) };
    }
    (big_m * half).sin() * ((big_m - 1.0) * half).cos() / (big_m * s)
}

fn cosine_mean_direct(a: f64, big_m: f64) -> f64 {
    (0..big_m as u64).map(|k| (k as f64 * a).cos()).sum::<f64>() / big_m
}

/// `8 pi^2 / n_c^3`.
pub fn gap_estimate(n_c: usize) -> f64 {
    8.0 * PI * PI / (n_c as f64).powi(3)
}

/// `gamma * ceil(log2(s ||A||_max pi / gap))`, at least `gamma`.
pub fn phase_bits(n_c: usize, gamma: usize) -> usize {
    let x = (NORM_BOUND * PI / gap_estimate(n_c)).log2();
    gamma * ((x - 1e-9).ceil().max(1.0) as usize)
}

/// Real solutions `p` in `(0, pi)` of `sin(p (n_c + 1)) / sin(p n_c) = +-sqrt 2`,
/// sorted; `2 sqrt 2 cos p` are the matching eigenvalues of
/// [`column_matrix`]. One root per eigenvalue of `A_col / sqrt 2` inside
/// `(-2, 2)`: `2 n_c - 2` of them for `n_c >= 3`, all four for `n_c = 2`.
pub fn quantization_roots(n_c: usize) -> Result<Vec<f64>> {
    if n_c < 2 {
        return Err(Error::Argument(format!("n_c = {n_c}: glued trees need at least 2 columns")));
    }
    let nf = n_c as f64;
    let mut roots = Vec::new();
    for sign in [1.0, -1.0] {
        let f = |p: f64| (p * (nf + 1.0)).sin() - sign * SQRT_2 * (p * nf).sin();
        let steps = 4000 * n_c;
        let h = PI / steps as f64;
        // both sines vanish at 0 and pi, so skip the end cells
        for i in 1..steps - 1 {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            let (fa, fb) = (f(a), f(b));
            if fa == 0.0 || fa.signum() == fb.signum() {
                continue;
            }
            roots.push(bisect(f, a, b));
        }
    }
    roots.sort_by(f64::total_cmp);
    let (eig, _) = jacobi_eigen(&(column_matrix(n_c) / SQRT_2))?;
    let expected = eig.iter().filter(|l| l.abs() < 2.0).count();
    if roots.len() != expected {
        return Err(Error::Quality(format!("found {} quantization roots, expected {expected}", roots.len())));
    }
    Ok(roots)
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if f(mid).signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// `N(p, n_c) = (1 + 2 n_c - sin(p (1 + 2 n_c)) / sin p) / 2`.
pub fn root_normalization(p: f64, n_c: usize) -> f64 {
    let two = 2.0 * n_c as f64;
    0.5 * (1.0 + two - (p * (1.0 + two)).sin() / p.sin())
}

/// Which simulation carries the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GluedBackend {
    /// Column subspace, any `n_c`.
    Reduced,
    /// Dense block encoding of the full adjacency matrix, `n_c <= 3`.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluedTreesConfig {
    pub n_c: usize,
    pub gamma: usize,
    pub shots: usize,
    pub seed: u64,
    pub backend: GluedBackend,
}

impl GluedTreesConfig {
    pub fn new(n_c: usize) -> Self {
        GluedTreesConfig { n_c, gamma: 3, shots: 1000, seed: 0, backend: GluedBackend::Reduced }
    }
}

/// Wilson score interval for `hits` out of `n` at confidence `z`.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z / (1.0 + z2 / nf) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluedTreesReport {
    pub n_c: usize,
    pub vertices: usize,
    pub gamma: usize,
    pub m: usize,
    pub queries_per_shot: u64,
    pub total_queries: u64,
    pub gap_estimate: f64,
    pub exact_gap: f64,
    /// Perfect-resolution EXIT probability.
    pub exact_probability: f64,
    /// EXIT probability of phase estimation with `m` bits.
    pub predicted_probability: f64,
    pub lower_bound: f64,
    pub shots: usize,
    pub postselected: usize,
    pub hits: usize,
    pub empirical_probability: f64,
    pub wilson_95: (f64, f64),
    /// First degree-2 vertex other than the ENTRANCE that was measured.
    pub exit_guess: Option<usize>,
    pub exit_found: bool,
    /// `|empirical - predicted|` in binomial standard deviations.
    pub z_score: f64,
    pub pass: bool,
}

/// Column-resolved outcome probabilities of one shot, post-selection
/// failure last.
fn outcome_probabilities(inst: &GluedTreesInstance, cs: &ColumnSystem, m: usize, backend: GluedBackend) -> Result<Vec<f64>> {
    let mut p = match backend {
        GluedBackend::Reduced => cs.qpe_column_probabilities(m),
        GluedBackend::Full => full_space_column_probabilities(inst, m)?,
    };
    let kept: f64 = p.iter().sum();
    p.push((1.0 - kept).max(0.0));
    Ok(p)
}

/// Phase estimation on the dense walk of the full adjacency matrix,
/// post-selected and summed over each column.
pub fn full_space_column_probabilities(inst: &GluedTreesInstance, m: usize) -> Result<Vec<f64>> {
    if inst.n_c > FULL_SPACE_MAX_NC {
        return Err(Error::Infeasible { required: inst.n_c, limit: FULL_SPACE_MAX_NC });
    }
    let enc = EncodedMatrix::from_matrix(&inst.adjacency())?;
    let n = enc.qubits();
    check_qubit_budget(2 * n + 2 + m)?;
    let walk = DenseWalk::new(&enc)?;
    let index = |v: usize| v << (n + 2);
    let dim = walk.walk().nrows();
    let mut state = nalgebra::DVector::<Complex64>::zeros(dim);
    state[index(inst.entrance)] = Complex64::new(1.0, 0.0);
    let big_m = 1usize << m;
    let mut per_vertex = vec![0.0; inst.len()];
    for _ in 0..big_m {
        for (v, acc) in per_vertex.iter_mut().enumerate() {
            *acc += state[index(v)].norm_sqr() / big_m as f64;
        }
        state = walk.walk() * state;
    }
    Ok(inst.columns.iter().map(|col| col.iter().map(|&v| per_vertex[v]).sum()).collect())
}

/// Samples the EXIT search: each shot either fails post-selection or
/// collapses to a uniformly random vertex of some column; a hit is a
/// measured degree-2 vertex other than the ENTRANCE.
pub fn solve(inst: &GluedTreesInstance, config: &GluedTreesConfig) -> Result<GluedTreesReport> {
    if config.gamma == 0 {
        return Err(Error::Argument("gamma must be at least 1".into()));
    }
    if config.shots == 0 {
        return Err(Error::Argument("at least one shot is required".into()));
    }
    let n_c = inst.n_c;
    let cs = ColumnSystem::new(n_c)?;
    let m = phase_bits(n_c, config.gamma);
    if m > 62 {
        return Err(Error::Infeasible { required: m, limit: 62 });
    }
    let probs = outcome_probabilities(inst, &cs, m, config.backend)?;
    let dist = rand::distributions::WeightedIndex::new(&probs)
        .map_err(|e| Error::Argument(format!("invalid outcome distribution: {e}")))?;
    let fail = probs.len() - 1;
    let (mut hits, mut postselected, mut exit_guess) = (0, 0, None);
    for shot in 0..config.shots {
        let mut rng = stream_rng(config.seed, 1 + shot as u64);
        let outcome = rng.sample(&dist);
        if outcome == fail {
            continue;
        }
        postselected += 1;
        let col = &inst.columns[outcome];
        let vertex = col[rng.gen_range(0..col.len())];
        if inst.degree(vertex) == 2 && vertex != inst.entrance {
            hits += 1;
            exit_guess.get_or_insert(vertex);
        }
    }
    let predicted = probs[2 * n_c - 1];
    let empirical = hits as f64 / config.shots as f64;
    let sigma = (predicted * (1.0 - predicted) / config.shots as f64).sqrt();
    let z_score = if sigma > 0.0 { (empirical - predicted).abs() / sigma } else { 0.0 };
    let exact = cs.exact_exit_probability();
    let lower_bound = 3.0 / (32.0 * n_c as f64);
    let exit_found = exit_guess == Some(inst.exit);
    let queries = query_formula(m);
    Ok(GluedTreesReport {
        n_c,
        vertices: inst.len(),
        gamma: config.gamma,
        m,
        queries_per_shot: queries,
        total_queries: queries * config.shots as u64,
        gap_estimate: gap_estimate(n_c),
        exact_gap: cs.exact_gap(),
        exact_probability: exact,
        predicted_probability: predicted,
        lower_bound,
        shots: config.shots,
        postselected,
        hits,
        empirical_probability: empirical,
        wilson_95: wilson_interval(hits, config.shots, 1.959_963_984_540_054),
        exit_guess,
        exit_found,
        z_score,
        pass: exact > lower_bound && exit_found && z_score <= 5.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_instance_shape() {
        let inst = generate(2, 1).unwrap();
        assert_eq!(inst.len(), 6);
        let mut deg: Vec<usize> = (0..6).map(|v| inst.degree(v)).collect();
        deg.sort_unstable();
        assert_eq!(deg, [2, 2, 3, 3, 3, 3]);
        assert_eq!(inst.degree(inst.entrance), 2);
        assert_eq!(inst.degree(inst.exit), 2);
        assert_eq!(generate(2, 1).unwrap(), inst);
        assert!(generate(1, 0).is_err());
    }

    #[test]
    fn degree_census_and_glue() {
        for n_c in 2..=7 {
            for seed in 0..3 {
                let inst = generate(n_c, seed).unwrap();
                let twos: Vec<usize> = (0..inst.len()).filter(|&v| inst.degree(v) == 2).collect();
                assert_eq!(twos.len(), 2);
                assert!(twos.contains(&inst.entrance) && twos.contains(&inst.exit));
                // every leaf has two partners across the glue
                for &v in &inst.columns[n_c - 1] {
                    let across = inst.neighbors[v].iter().filter(|w| inst.columns[n_c].contains(w)).count();
                    assert_eq!(across, 2);
                }
                assert!(inst.subspace_leak() < 1e-12);
            }
        }
    }

    #[test]
    fn column_matrix_transcription() {
        let s = SQRT_2;
        let want = DMatrix::from_row_slice(4, 4, &[0.0, s, 0.0, 0.0, s, 0.0, 2.0, 0.0, 0.0, 2.0, 0.0, s, 0.0, 0.0, s, 0.0]);
        assert_eq!(column_matrix(2), want);
        for n_c in 2..=5 {
            let inst = generate(n_c, 7).unwrap();
            assert!((inst.projected_adjacency() - column_matrix(n_c)).amax() < 1e-12);
            let cs = ColumnSystem::new(n_c).unwrap();
            assert!(cs.eigenvalues.iter().all(|l| l.abs() <= 3.0));
            // spectrum of A_col inside spectrum of A
            let (full, _) = jacobi_eigen(&inst.adjacency()).unwrap();
            for l in &cs.eigenvalues {
                assert!(full.iter().any(|x| (x - l).abs() < 1e-9));
            }
        }
    }

    #[test]
    fn gap_examples() {
        assert!((gap_estimate(4) - 1.2337).abs() < 1e-4);
        for n_c in 6..=12 {
            let r = ColumnSystem::new(n_c).unwrap().exact_gap() / gap_estimate(n_c);
            assert!((0.5..=2.0).contains(&r), "n_c = {n_c}: ratio {r}");
        }
        for gamma in 1..=4 {
            for n_c in 4..=12 {
                let approx = ((3.0 * (n_c as f64).powi(3) / (8.0 * PI)).log2() - 1e-9).ceil() as usize;
                assert_eq!(phase_bits(n_c, gamma), gamma * approx);
            }
        }
    }

    #[test]
    fn roots_for_eight_columns() {
        let roots = quantization_roots(8).unwrap();
        assert_eq!(roots.len(), 14);
        for n_c in 3..=12 {
            assert_eq!(quantization_roots(n_c).unwrap().len(), 2 * n_c - 2);
        }
        assert_eq!(quantization_roots(2).unwrap().len(), 4);
        for l in 1..8 {
            let near = roots.iter().filter(|&&p| (p - PI * l as f64 / 8.0).abs() < PI / 16.0).count();
            assert_eq!(near, 2, "l = {l}");
        }
    }

    #[test]
    fn roots_match_spectrum() {
        for n_c in 2..=12 {
            let cs = ColumnSystem::new(n_c).unwrap();
            for p in quantization_roots(n_c).unwrap() {
                let l = 2.0 * SQRT_2 * p.cos();
                assert!(cs.eigenvalues.iter().any(|x| (x - l).abs() < 1e-8));
                assert!(root_normalization(p, n_c) < 2.0 * n_c as f64);
            }
        }
    }

    #[test]
    fn exact_probability_from_roots() {
        // the real roots alone give a lower bound on the full sum
        for n_c in 2..=12 {
            let cs = ColumnSystem::new(n_c).unwrap();
            let partial: f64 = quantization_roots(n_c)
                .unwrap()
                .iter()
                .map(|&p| p.sin().powi(4) / (2.0 * root_normalization(p, n_c).powi(2)))
                .sum();
            let exact = cs.exact_exit_probability();
            assert!(partial <= exact + 1e-12);
            assert!(exact > 3.0 / (32.0 * n_c as f64));
        }
        assert!((ColumnSystem::new(2).unwrap().exact_exit_probability() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_walk() {
        for (n_c, m) in [(2, 3), (3, 5), (4, 7)] {
            let cs = ColumnSystem::new(n_c).unwrap();
            let a = cs.qpe_column_probabilities(m);
            let b = cs.qpe_column_probabilities_by_walk(m);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
            // large m approaches the perfect-resolution value
            let fine = cs.qpe_column_probabilities(30);
            assert!((fine[2 * n_c - 1] - cs.exact_exit_probability()).abs() < 1e-6);
        }
    }

    #[test]
    fn full_space_agrees_with_reduction() {
        for n_c in 2..=3 {
            let inst = generate(n_c, 4).unwrap();
            let cs = ColumnSystem::new(n_c).unwrap();
            for m in [2, 4] {
                let full = full_space_column_probabilities(&inst, m).unwrap();
                let red = cs.qpe_column_probabilities(m);
                for (x, y) in full.iter().zip(&red) {
                    assert!((x - y).abs() < 1e-10, "n_c {n_c} m {m}: {x} vs {y}");
                }
            }
        }
        assert!(matches!(full_space_column_probabilities(&generate(4, 0).unwrap(), 2), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn sampled_search_finds_exit() {
        let inst = generate(4, 2).unwrap();
        let cfg = GluedTreesConfig { shots: 10_000, seed: 9, ..GluedTreesConfig::new(4) };
        let r = solve(&inst, &cfg).unwrap();
        assert!(r.exit_found);
        assert!(r.z_score <= 5.0);
        assert!((r.empirical_probability - r.exact_probability).abs() < 5.0 * (r.exact_probability / 1e4).sqrt());
        assert_eq!(r.queries_per_shot, 6 * ((1u64 << r.m) - 1));
        assert!(r.pass);
        let again = solve(&inst, &cfg).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn gamma_insensitivity() {
        let inst = generate(5, 0).unwrap();
        for gamma in 2..=4 {
            let r = solve(&inst, &GluedTreesConfig { gamma, shots: 4000, seed: 1, ..GluedTreesConfig::new(5) }).unwrap();
            assert!((r.predicted_probability - r.exact_probability).abs() < 0.01);
            assert!(r.exit_found);
        }
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson_interval(0, 0, 1.96), (0.0, 1.0));
    }
}

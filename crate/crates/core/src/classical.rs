//! Exact classical reference: a cyclic Jacobi eigensolver for symmetric
//! matrices and analytic evaluation of local and nonlocal response
//! functions. Every quantum estimate in the crate is scored against this
//! module.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::SystemMatrices;

/// Off-diagonal Frobenius norm at which the Jacobi sweeps stop, relative to
/// `max(1, ||A||_F)`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Relative tolerance for grouping degenerate eigenvalues (times `||H||_max`).
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

/// A group-summed weight at or below this value counts as "no support".
pub const SUPPORT_TOLERANCE: f64 = 1e-10;

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a real
/// symmetric matrix, computed with cyclic Jacobi rotations.
pub fn jacobi_eigen(matrix: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, matrix.ncols())));
    }
    check_symmetric(matrix, 1e-12)?;
    let mut a = matrix.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(1.0);

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) < JACOBI_TOLERANCE * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a[(k, p)] = new_kp;
                    a[(p, k)] = new_kp;
                    a[(k, q)] = new_kq;
                    a[(q, k)] = new_kq;
                }
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |row, col| v[(row, order[col])]);
    Ok((values, vectors))
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Errors if `|A_ij - A_ji| > tol * max(1, max|A|)` anywhere.
pub fn check_symmetric(a: &DMatrix<f64>, tol: f64) -> Result<()> {
    let scale = a.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    for i in 0..a.nrows() {
        for j in i + 1..a.ncols() {
            let deviation = (a[(i, j)] - a[(j, i)]).abs();
            if deviation > tol * scale {
                return Err(Error::NotSymmetric { row: i, col: j, deviation });
            }
        }
    }
    Ok(())
}

/// A set of numerically degenerate eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenGroup {
    /// Mean of the member eigenvalues.
    pub value: f64,
    /// Indices into [`ModalData::eigenvalues`].
    pub members: Vec<usize>,
}

/// Normal-mode data of `H`: the classical ground truth.
#[derive(Debug, Clone)]
pub struct ModalData {
    pub eigenvalues: Vec<f64>,
    /// Orthogonal `W` with eigenvectors as columns.
    pub modes: DMatrix<f64>,
    pub groups: Vec<EigenGroup>,
    /// `N_u`: number of distinct eigenvalues with support at each vertex.
    pub support_counts: Vec<usize>,
    /// Minimum positive gap between supported eigenvalues at each vertex;
    /// `None` when fewer than two distinct eigenvalues are supported.
    pub vertex_gaps: Vec<Option<f64>>,
    /// Minimum positive gap over the whole spectrum.
    pub global_gap: Option<f64>,
}

impl ModalData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Group-summed weights `sum_{j in group} W_uj^2`, one per group.
    pub fn group_weights(&self, u: usize) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| g.members.iter().map(|&j| self.modes[(u, j)].powi(2)).sum())
            .collect()
    }

    /// Group-summed products `sum_{j in group} W_uj W_vj`.
    pub fn group_products(&self, u: usize, v: usize) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| g.members.iter().map(|&j| self.modes[(u, j)] * self.modes[(v, j)]).sum())
            .collect()
    }
}

/// Diagonalises `H` of a built system.
pub fn diagonalize(sys: &SystemMatrices) -> Result<ModalData> {
    diagonalize_matrix(&sys.hamiltonian)
}

/// Diagonalises an arbitrary real symmetric matrix and derives the
/// per-vertex support and gap data.
pub fn diagonalize_matrix(h: &DMatrix<f64>) -> Result<ModalData> {
    let (eigenvalues, modes) = jacobi_eigen(h)?;
    let n = eigenvalues.len();
    let max_norm = h.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let tol = DEGENERACY_TOLERANCE * max_norm.max(f64::MIN_POSITIVE);

    let mut groups: Vec<EigenGroup> = Vec::new();
    for (j, &value) in eigenvalues.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if value - eigenvalues[*g.members.last().unwrap()] <= tol => g.members.push(j),
            _ => groups.push(EigenGroup { value, members: vec![j] }),
        }
    }
    for g in &mut groups {
        g.value = g.members.iter().map(|&j| eigenvalues[j]).sum::<f64>() / g.members.len() as f64;
    }

    let global_gap = groups.windows(2).map(|w| w[1].value - w[0].value).reduce(f64::min);

    let mut modal = ModalData {
        eigenvalues,
        modes,
        groups,
        support_counts: vec![0; n],
        vertex_gaps: vec![None; n],
        global_gap,
    };
    for u in 0..n {
        let weights = modal.group_weights(u);
        let supported: Vec<f64> = modal
            .groups
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w > SUPPORT_TOLERANCE)
            .map(|(g, _)| g.value)
            .collect();
        modal.support_counts[u] = supported.len();
        modal.vertex_gaps[u] = supported.windows(2).map(|w| w[1] - w[0]).reduce(f64::min);
    }
    Ok(modal)
}

/// Squared row `u` of `W`: the weights of vertex `u` on each eigenvector.
pub fn weights_at(modal: &ModalData, u: usize) -> Vec<f64> {
    (0..modal.dim()).map(|j| modal.modes[(u, j)].powi(2)).collect()
}

/// One pole term `weight / (eigenvalue + l^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoleTerm {
    pub eigenvalue: f64,
    pub weight: f64,
}

/// Pole-guard settings for [`ResponseFunction::evaluate`].
#[derive(Debug, Clone, Copy)]
pub struct PoleGuard {
    pub guard: f64,
    pub allow_poles: bool,
}

impl Default for PoleGuard {
    fn default() -> Self {
        Self { guard: 1e-12, allow_poles: false }
    }
}

/// `G(l) = mass_scale * sum_j w_j / (lambda_j + l^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseFunction {
    pub terms: Vec<PoleTerm>,
    pub mass_scale: f64,
}

impl ResponseFunction {
    pub fn evaluate(&self, points: &[Complex64], guard: PoleGuard) -> Result<Vec<Complex64>> {
        points
            .iter()
            .map(|&l| {
                let l2 = l * l;
                let mut sum = Complex64::new(0.0, 0.0);
                for term in &self.terms {
                    let denom = l2 + term.eigenvalue;
                    if !guard.allow_poles && term.weight != 0.0 && denom.norm() < guard.guard {
                        return Err(Error::NearPole {
                            eigenvalue: term.eigenvalue,
                            point: format!("{l}"),
                        });
                    }
                    sum += term.weight / denom;
                }
                Ok(sum * self.mass_scale)
            })
            .collect()
    }

    /// Evaluates on the imaginary axis `l = i omega`.
    pub fn evaluate_frequencies(&self, omegas: &[f64], guard: PoleGuard) -> Result<Vec<Complex64>> {
        let points: Vec<Complex64> = omegas.iter().map(|&w| Complex64::new(0.0, w)).collect();
        self.evaluate(&points, guard)
    }

    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|t| t.weight).sum()
    }
}

/// Local response `G_uu` with degenerate eigenvalues merged.
pub fn response_local(modal: &ModalData, u: usize, mass: f64) -> ResponseFunction {
    let terms = modal
        .groups
        .iter()
        .zip(modal.group_weights(u))
        .map(|(g, weight)| PoleTerm { eigenvalue: g.value, weight })
        .collect();
    ResponseFunction { terms, mass_scale: 1.0 / mass }
}

/// Nonlocal response `G_uv` with signed products `W_uj W_vj`.
pub fn response_nonlocal(
    modal: &ModalData,
    u: usize,
    v: usize,
    mass_u: f64,
    mass_v: f64,
) -> ResponseFunction {
    let terms = modal
        .groups
        .iter()
        .zip(modal.group_products(u, v))
        .map(|(g, weight)| PoleTerm { eigenvalue: g.value, weight })
        .collect();
    ResponseFunction { terms, mass_scale: 1.0 / (mass_u * mass_v).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_matrices, OscillatorNetwork};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> ModalData {
        let sys = build_matrices(&OscillatorNetwork::chain(2, 1.0, 1.0, 1.0).unwrap());
        diagonalize(&sys).unwrap()
    }

    fn residuals(h: &DMatrix<f64>, modal: &ModalData) -> (f64, f64) {
        let w = &modal.modes;
        let n = h.nrows();
        let orth = (w.transpose() * w - DMatrix::<f64>::identity(n, n)).amax();
        let mut diag = w.transpose() * h * w;
        for j in 0..n {
            diag[(j, j)] -= modal.eigenvalues[j];
        }
        (orth, diag.amax())
    }

    #[test]
    fn one_by_one() {
        let modal = diagonalize_matrix(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(modal.eigenvalues, vec![1.0]);
        assert_eq!(modal.modes[(0, 0)].abs(), 1.0);
        assert_eq!(modal.global_gap, None);
    }

    #[test]
    fn two_by_two_by_hand() {
        let modal = pair();
        assert!((modal.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((modal.eigenvalues[1] - 3.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // columns (1,1)/sqrt2 and (1,-1)/sqrt2 up to sign
        assert!((modal.modes[(0, 0)].abs() - s).abs() < 1e-14);
        assert!((modal.modes[(0, 0)] - modal.modes[(1, 0)]).abs() < 1e-14);
        assert!((modal.modes[(0, 1)] + modal.modes[(1, 1)]).abs() < 1e-14);
        let w = weights_at(&modal, 0);
        assert!((w[0] - 0.5).abs() < 1e-14 && (w[1] - 0.5).abs() < 1e-14);
        assert_eq!(modal.support_counts, vec![2, 2]);
        assert!((modal.vertex_gaps[0].unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_chain_matches_analytic_spectrum() {
        let net = OscillatorNetwork::periodic_chain(8, 1.0, 0.0, 1.0).unwrap();
        let modal = diagonalize(&build_matrices(&net)).unwrap();
        let mut expected: Vec<f64> = (0..8)
            .map(|j| 2.0 * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / 8.0).cos()))
            .collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in modal.eigenvalues.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // 0, 2-sqrt2 (x2), 2 (x2), 2+sqrt2 (x2), 4
        assert_eq!(modal.groups.len(), 5);
        assert_eq!(modal.support_counts[0], 5);
        let gw = modal.group_weights(3);
        assert!((gw[0] - 0.125).abs() < 1e-12);
        assert!((gw[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn decoupled_pair_puts_all_weight_on_own_frequency() {
        let net = OscillatorNetwork::new(vec![1.0, 2.0], vec![3.0, 1.0], &[]).unwrap();
        let modal = diagonalize(&build_matrices(&net)).unwrap();
        let rf = response_local(&modal, 0, 1.0);
        let own: Vec<_> = rf.terms.iter().filter(|t| t.weight > 0.5).collect();
        assert_eq!(own.len(), 1);
        assert!((own[0].eigenvalue - 3.0).abs() < 1e-14);
        let cross = response_nonlocal(&modal, 0, 1, 1.0, 2.0);
        assert!(cross.terms.iter().all(|t| t.weight == 0.0));
    }

    #[test]
    fn response_examples() {
        let single = diagonalize_matrix(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        let g = response_local(&single, 0, 1.0)
            .evaluate(&[Complex64::new(0.0, 0.0)], PoleGuard::default())
            .unwrap();
        assert!((g[0] - 1.0).norm() < 1e-15);

        let modal = pair();
        let rf = response_local(&modal, 0, 1.0);
        let g = rf.evaluate_frequencies(&[2f64.sqrt()], PoleGuard::default()).unwrap();
        assert!(g[0].norm() < 1e-14);

        // approaching the pole at omega^2 = 1 blows up
        let near = rf.evaluate_frequencies(&[1.0 - 1e-9], PoleGuard::default()).unwrap();
        assert!(near[0].norm() > 1e7);
        match rf.evaluate_frequencies(&[1.0], PoleGuard::default()) {
            Err(Error::NearPole { eigenvalue, .. }) => assert!((eigenvalue - 1.0).abs() < 1e-12),
            other => panic!("expected pole error, got {other:?}"),
        }
        let allowed = rf.evaluate_frequencies(&[1.0], PoleGuard { guard: 1e-12, allow_poles: true });
        assert!(allowed.is_ok());

        let cross = response_nonlocal(&modal, 0, 1, 1.0, 1.0);
        assert!((cross.terms[0].weight - 0.5).abs() < 1e-14);
        assert!((cross.terms[1].weight + 0.5).abs() < 1e-14);
        let swapped = response_nonlocal(&modal, 1, 0, 1.0, 1.0);
        let pts = [Complex64::new(0.3, 0.7), Complex64::new(0.0, 2.5)];
        let a = cross.evaluate(&pts, PoleGuard::default()).unwrap();
        let b = swapped.evaluate(&pts, PoleGuard::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(diagonalize_matrix(&h), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn large_random_psd_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = OscillatorNetwork::random(128, 200, &mut rng).unwrap();
        let sys = build_matrices(&net);
        let modal = diagonalize(&sys).unwrap();
        let (orth, diag) = residuals(&sys.hamiltonian, &modal);
        assert!(orth < 1e-10, "orthogonality residual {orth}");
        assert!(diag < 1e-10, "diagonalisation residual {diag}");
        assert!(modal.eigenvalues[0] > -1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn modal_invariants(seed in any::<u64>(), n in 1usize..32, extra in 0usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = OscillatorNetwork::random(n, extra, &mut rng).unwrap();
            let sys = build_matrices(&net);
            let modal = diagonalize(&sys).unwrap();
            let (orth, diag) = residuals(&sys.hamiltonian, &modal);
            prop_assert!(orth < 1e-10);
            prop_assert!(diag < 1e-10);
            prop_assert!(modal.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(modal.eigenvalues[0] >= -1e-10);
            for u in 0..n {
                let row: f64 = weights_at(&modal, u).iter().sum();
                prop_assert!((row - 1.0).abs() < 1e-10);
                let col: f64 = (0..n).map(|v| modal.modes[(v, u)].powi(2)).sum();
                prop_assert!((col - 1.0).abs() < 1e-10);
                if let (Some(local), Some(global)) = (modal.vertex_gaps[u], modal.global_gap) {
                    prop_assert!(local >= global);
                }
                let local = response_local(&modal, u, net.masses()[u]);
                let diag_term = response_nonlocal(&modal, u, u, net.masses()[u], net.masses()[u]);
                prop_assert_eq!(local.terms.len(), diag_term.terms.len());
                for (a, b) in local.terms.iter().zip(&diag_term.terms) {
                    prop_assert_eq!(a.eigenvalue, b.eigenvalue);
                    prop_assert!((a.weight - b.weight).abs() < 1e-15);
                    prop_assert!(a.weight >= 0.0);
                }
                prop_assert!((local.mass_scale - diag_term.mass_scale).abs() < 1e-15);
                prop_assert!(local.total_weight() <= 1.0 + 1e-10);
            }
        }
    }
}

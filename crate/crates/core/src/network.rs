//! Coupled-oscillator networks and the matrices they induce.
//!
//! A network is a graph whose vertices carry a mass and a spring to a common
//! wall, and whose edges carry coupling springs. From it we build the mass
//! matrix `M`, the stiffness matrix `K` and the symmetric matrix
//! `H = M^{-1/2} K M^{-1/2}` whose spectrum gives the normal modes.
//!
//! Vertex ids are 0-based inside the crate; the JSON problem format is
//! 1-based.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masses, wall springs and coupling springs of an oscillator network.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorNetwork {
    masses: Vec<f64>,
    wall_springs: Vec<f64>,
    /// Keyed by `(min, max)` so the map is symmetric by construction.
    couplings: BTreeMap<(usize, usize), f64>,
}

impl OscillatorNetwork {
    /// Builds and validates a network. `edges` are undirected `(u, v, kappa)`
    /// triples; an edge may be listed in both orientations only with the same
    /// spring constant.
    ///
    /// Wall springs may be zero (a free-floating mass) as long as the vertex
    /// is held by at least one coupling spring.
    pub fn new(
        masses: Vec<f64>,
        wall_springs: Vec<f64>,
        edges: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let size = masses.len();
        if wall_springs.len() != size {
            return Err(Error::Dimension(format!(
                "{} masses but {} wall springs",
                size,
                wall_springs.len()
            )));
        }
        if size == 0 {
            return Err(Error::Dimension("network has no oscillators".into()));
        }
        for (vertex, &value) in masses.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidMass { vertex, value });
            }
        }
        for (vertex, &value) in wall_springs.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidWallSpring { vertex, value });
            }
        }
        let mut couplings = BTreeMap::new();
        for &(u, v, value) in edges {
            for vertex in [u, v] {
                if vertex >= size {
                    return Err(Error::VertexOutOfRange { vertex, size });
                }
            }
            if u == v {
                return Err(Error::SelfEdge(u));
            }
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidCoupling { u, v, value });
            }
            let key = (u.min(v), u.max(v));
            if let Some(&first) = couplings.get(&key) {
                if first != value {
                    return Err(Error::AsymmetricEdge { u, v, first, second: value });
                }
            }
            couplings.insert(key, value);
        }
        let net = Self { masses, wall_springs, couplings };
        for u in 0..size {
            if net.wall_springs[u] == 0.0 && net.degree(u) == 0 {
                return Err(Error::FreeVertex(u));
            }
        }
        Ok(net)
    }

    /// Open chain `0 - 1 - ... - (n-1)` with uniform parameters.
    pub fn chain(n: usize, mass: f64, wall: f64, coupling: f64) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|u| (u - 1, u, coupling)).collect();
        Self::new(vec![mass; n], vec![wall; n], &edges)
    }

    /// Ring of `n >= 3` oscillators with uniform parameters.
    pub fn periodic_chain(n: usize, mass: f64, wall: f64, coupling: f64) -> Result<Self> {
        let edges: Vec<_> = (0..n).map(|u| (u, (u + 1) % n, coupling)).collect();
        Self::new(vec![mass; n], vec![wall; n], &edges)
    }

    /// Random connected network: a random spanning tree plus extra edges, with
    /// masses and springs drawn from `[0.5, 2)`.
    pub fn random<R: Rng + ?Sized>(n: usize, extra_edges: usize, rng: &mut R) -> Result<Self> {
        let masses = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let walls = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let mut edges = Vec::new();
        let mut seen = BTreeSet::new();
        for v in 1..n {
            let u = rng.gen_range(0..v);
            seen.insert((u, v));
            edges.push((u, v, rng.gen_range(0.5..2.0)));
        }
        let mut attempts = 0;
        while edges.len() < n.saturating_sub(1) + extra_edges && attempts < 100 * (extra_edges + 1) {
            attempts += 1;
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u == v || !seen.insert((u.min(v), u.max(v))) {
                continue;
            }
            edges.push((u, v, rng.gen_range(0.5..2.0)));
        }
        Self::new(masses, walls, &edges)
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn wall_springs(&self) -> &[f64] {
        &self.wall_springs
    }

    /// Coupling spring between `u` and `v`, if they are joined by an edge.
    pub fn coupling(&self, u: usize, v: usize) -> Option<f64> {
        self.couplings.get(&(u.min(v), u.max(v))).copied()
    }

    /// Iterates over edges as `(u, v, kappa)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.couplings.iter().map(|(&(u, v), &k)| (u, v, k))
    }

    fn degree(&self, u: usize) -> usize {
        self.couplings.keys().filter(|&&(a, b)| a == u || b == u).count()
    }

    /// Closed neighbourhood of `u` (its neighbours plus `u` itself), sorted.
    pub fn closed_neighborhood(&self, u: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .couplings
            .keys()
            .filter_map(|&(a, b)| {
                if a == u {
                    Some(b)
                } else if b == u {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.push(u);
        out.sort_unstable();
        out
    }

    /// Largest closed-neighbourhood size over all vertices.
    pub fn sparsity(&self) -> usize {
        (0..self.len()).map(|u| self.closed_neighborhood(u).len()).max().unwrap_or(0)
    }

    /// Closed neighbourhood of `u` padded with dummy columns up to the
    /// sparsity of the network.
    pub fn pad_neighborhood(&self, u: usize) -> Result<Vec<usize>> {
        if u >= self.len() {
            return Err(Error::VertexOutOfRange { vertex: u, size: self.len() });
        }
        Ok(pad_columns(&self.closed_neighborhood(u), self.sparsity(), self.len()))
    }

    /// Reads a JSON problem file (1-based vertex ids).
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        file.into_network()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_problem_file(&self) -> ProblemFile {
        ProblemFile {
            masses: self.masses.clone(),
            wall_springs: self.wall_springs.clone(),
            edges: self.edges().map(|(u, v, k)| (u + 1, v + 1, k)).collect(),
        }
    }
}

/// On-disk problem description. Vertex ids in `edges` are 1-based.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub masses: Vec<f64>,
    pub wall_springs: Vec<f64>,
    #[serde(default)]
    pub edges: Vec<(usize, usize, f64)>,
}

impl ProblemFile {
    pub fn into_network(self) -> Result<OscillatorNetwork> {
        let size = self.masses.len();
        let mut edges = Vec::with_capacity(self.edges.len());
        for (u, v, k) in self.edges {
            for vertex in [u, v] {
                if vertex == 0 || vertex > size {
                    return Err(Error::VertexOutOfRange { vertex, size });
                }
            }
            edges.push((u - 1, v - 1, k));
        }
        OscillatorNetwork::new(self.masses, self.wall_springs, &edges).map_err(one_based)
    }
}

/// Renumbers vertex ids in an error to the 1-based ids of the file.
fn one_based(err: Error) -> Error {
    match err {
        Error::InvalidMass { vertex, value } => Error::InvalidMass { vertex: vertex + 1, value },
        Error::InvalidWallSpring { vertex, value } => Error::InvalidWallSpring { vertex: vertex + 1, value },
        Error::InvalidCoupling { u, v, value } => Error::InvalidCoupling { u: u + 1, v: v + 1, value },
        Error::SelfEdge(v) => Error::SelfEdge(v + 1),
        Error::AsymmetricEdge { u, v, first, second } => Error::AsymmetricEdge { u: u + 1, v: v + 1, first, second },
        Error::FreeVertex(v) => Error::FreeVertex(v + 1),
        other => other,
    }
}

/// Pads a sorted set of occupied columns with the smallest unused indices in
/// `0..dim` until it holds `s` entries. The result is sorted and distinct.
pub fn pad_columns(occupied: &[usize], s: usize, dim: usize) -> Vec<usize> {
    let mut out: BTreeSet<usize> = occupied.iter().copied().collect();
    let mut candidate = 0;
    while out.len() < s && candidate < dim {
        out.insert(candidate);
        candidate += 1;
    }
    out.into_iter().collect()
}

/// The matrices `M`, `K`, `H` together with the sparse-access metadata used
/// to build the oracles.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub mass_diag: Vec<f64>,
    pub stiffness: DMatrix<f64>,
    pub hamiltonian: DMatrix<f64>,
    pub sparsity: usize,
    pub max_norm: f64,
    /// `1 / (s * max_norm)`.
    pub alpha: f64,
    /// For each row, exactly `sparsity` distinct column indices containing
    /// the row's closed neighbourhood.
    pub padded_neighbors: Vec<Vec<usize>>,
}

impl SystemMatrices {
    pub fn dim(&self) -> usize {
        self.mass_diag.len()
    }

    /// `s * ||H||_max`, the spectral radius bound used throughout the
    /// phase-estimation arithmetic.
    pub fn norm_bound(&self) -> f64 {
        self.sparsity as f64 * self.max_norm
    }
}

/// Builds `M`, `K` and `H = M^{-1/2} K M^{-1/2}` for a validated network.
pub fn build_matrices(net: &OscillatorNetwork) -> SystemMatrices {
    let n = net.len();
    let mut stiffness = DMatrix::<f64>::zeros(n, n);
    for u in 0..n {
        stiffness[(u, u)] = net.wall_springs[u];
    }
    for (u, v, k) in net.edges() {
        stiffness[(u, u)] += k;
        stiffness[(v, v)] += k;
        stiffness[(u, v)] = -k;
        stiffness[(v, u)] = -k;
    }
    let inv_sqrt: Vec<f64> = net.masses.iter().map(|m| 1.0 / m.sqrt()).collect();
    let hamiltonian =
        DMatrix::from_fn(n, n, |u, v| stiffness[(u, v)] * inv_sqrt[u] * inv_sqrt[v]);
    let max_norm = hamiltonian.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let sparsity = net.sparsity();
    let padded_neighbors = (0..n)
        .map(|u| pad_columns(&net.closed_neighborhood(u), sparsity, n))
        .collect();
    SystemMatrices {
        mass_diag: net.masses.clone(),
        stiffness,
        hamiltonian,
        sparsity,
        max_norm,
        alpha: 1.0 / (sparsity as f64 * max_norm),
        padded_neighbors,
    }
}

//! Ground-truth data model: causal graphs, exact and entangled linear SCMs,
//! sampling, and mixing latents into observed benchmark scores.
//!
//! Data are stored with samples as rows. A structural equation written for a
//! column vector, `z = (I − A)^{-1} Ω^{1/2} ε`, therefore appears here as
//! `Z = E Ω^{1/2} (I − A)^{-T}`, and observations `x = G z` become `X = Z Gᵀ`.
//! Node indices are 0-based everywhere.

use std::collections::BTreeSet;
use std::collections::BinaryHeap;
use std::cmp::Reverse;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix_json;
use crate::seed;

/// Tolerance on `‖u_i‖₂ = 1` for entanglement rows.
pub const UNIT_ROW_TOL: f64 = 1e-8;

/// A DAG over `node_count` latent nodes, with a cached topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
    order: Vec<usize>,
}

impl CausalGraph {
    /// Builds a graph from `(parent, child)` pairs.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let edges: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        let order = topological_order(node_count, &edges)?;
        Ok(CausalGraph {
            node_count,
            edges,
            order,
        })
    }

    /// The complete DAG `j → i` for all `j < i`.
    pub fn complete(node_count: usize) -> Self {
        let edges = (0..node_count).flat_map(|i| (0..i).map(move |j| (j, i)));
        CausalGraph::new(node_count, edges).expect("complete index-ordered graph is acyclic")
    }

    pub fn empty(node_count: usize) -> Self {
        CausalGraph::new(node_count, []).expect("edgeless graph is acyclic")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.edges.contains(&(parent, child))
    }

    /// Topological order: `order()[p]` is the node at position `p`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn parents(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, c)| c == node)
            .map(|&(p, _)| p)
            .collect()
    }
}

/// Kahn's algorithm with ties broken by smallest node index.
pub fn topological_order(node_count: usize, edges: &BTreeSet<(usize, usize)>) -> Result<Vec<usize>> {
    if node_count == 0 {
        return Err(Error::InvalidInput("graph needs at least one node".into()));
    }
    let mut indegree = vec![0usize; node_count];
    let mut children = vec![Vec::new(); node_count];
    for &(p, c) in edges {
        if p >= node_count || c >= node_count {
            return Err(Error::InvalidInput(format!(
                "edge ({p}, {c}) references a node outside 0..{node_count}"
            )));
        }
        if p == c {
            return Err(Error::NotADag(p));
        }
        indegree[c] += 1;
        children[p].push(c);
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..node_count)
        .filter(|&i| indegree[i] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(node_count);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() < node_count {
        let stuck = (0..node_count).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(Error::NotADag(stuck));
    }
    Ok(order)
}

/// Non-Gaussian source families, each standardised to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceDistribution {
    /// Uniform on `[−√3, √3]`.
    Uniform,
    /// Laplace with scale `1/√2`.
    Laplace,
    /// `Exp(1) − 1`.
    CenteredExponential,
    /// `±1` with equal probability.
    TwoPoint,
}

impl SourceDistribution {
    pub const ALL: [SourceDistribution; 4] = [
        SourceDistribution::Uniform,
        SourceDistribution::Laplace,
        SourceDistribution::CenteredExponential,
        SourceDistribution::TwoPoint,
    ];

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            SourceDistribution::Uniform => (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt(),
            SourceDistribution::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                let b = std::f64::consts::FRAC_1_SQRT_2;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            }
            SourceDistribution::CenteredExponential => {
                let u: f64 = rng.random();
                -(1.0 - u).max(f64::MIN_POSITIVE).ln() - 1.0
            }
            SourceDistribution::TwoPoint => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Exact linear SCM `z_i = Σ_j A_ij z_j + σ_i^{1/2} ε_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScm {
    graph: CausalGraph,
    weights: DMatrix<f64>,
    variances: Vec<f64>,
    distributions: Vec<SourceDistribution>,
}

impl LinearScm {
    pub fn new(
        graph: CausalGraph,
        weights: DMatrix<f64>,
        variances: Vec<f64>,
        distributions: Vec<SourceDistribution>,
    ) -> Result<Self> {
        let d = graph.node_count();
        if weights.shape() != (d, d) {
            return Err(Error::mismatch("scm weights", format!("{d}x{d}"), format!("{:?}", weights.shape())));
        }
        if variances.len() != d {
            return Err(Error::mismatch("scm variances", d, variances.len()));
        }
        if distributions.len() != d {
            return Err(Error::mismatch("scm distributions", d, distributions.len()));
        }
        for i in 0..d {
            for j in 0..d {
                let w = weights[(i, j)];
                if !w.is_finite() {
                    return Err(Error::InvalidInput(format!("weight ({i}, {j}) is not finite")));
                }
                if w != 0.0 && !graph.has_edge(j, i) {
                    return Err(Error::InvalidInput(format!(
                        "nonzero weight A[{i}][{j}] without edge {j} -> {i}"
                    )));
                }
            }
        }
        if let Some(i) = variances.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput(format!("variance of node {i} must be positive")));
        }
        let scm = LinearScm {
            graph,
            weights,
            variances,
            distributions,
        };
        if (DMatrix::identity(d, d) - &scm.weights).try_inverse().is_none() {
            return Err(Error::DegenerateScm);
        }
        Ok(scm)
    }

    /// Random weights on every edge of `graph`, magnitudes uniform in
    /// `weight_range` with random sign; variances uniform in `variance_range`.
    pub fn random<R: Rng + ?Sized>(
        graph: CausalGraph,
        weight_range: (f64, f64),
        variance_range: (f64, f64),
        distributions: Vec<SourceDistribution>,
        rng: &mut R,
    ) -> Result<Self> {
        let d = graph.node_count();
        let mut weights = DMatrix::zeros(d, d);
        for (p, c) in graph.edges() {
            let mag = rng.random_range(weight_range.0..=weight_range.1);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            weights[(c, p)] = sign * mag;
        }
        let variances = (0..d)
            .map(|_| rng.random_range(variance_range.0..=variance_range.1))
            .collect();
        LinearScm::new(graph, weights, variances, distributions)
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn distributions(&self) -> &[SourceDistribution] {
        &self.distributions
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Checks the identifiability precondition that per-node source
    /// distributions are pairwise distinct.
    pub fn validate_identifiable(&self) -> Result<()> {
        let distinct: BTreeSet<_> = self.distributions.iter().map(|d| *d as u8).collect();
        if distinct.len() != self.distributions.len() {
            return Err(Error::InvalidInput(
                "identifiability requires pairwise distinct source distributions".into(),
            ));
        }
        Ok(())
    }

    /// `B = Ω^{-1/2} (I − A)`, so that `ε = B z`.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let d = self.node_count();
        let mut b = DMatrix::identity(d, d) - &self.weights;
        for i in 0..d {
            let s = 1.0 / self.variances[i].sqrt();
            b.row_mut(i).scale_mut(s);
        }
        b
    }

    /// `(I − A)^{-1} Ω (I − A)^{-T}`.
    pub fn latent_covariance(&self) -> DMatrix<f64> {
        let d = self.node_count();
        let inv = (DMatrix::identity(d, d) - &self.weights)
            .try_inverse()
            .expect("validated at construction");
        let omega = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.variances.clone()));
        &inv * omega * inv.transpose()
    }

    /// Pushes source rows through the structural equations in topological order.
    pub fn propagate(&self, sources: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d = self.node_count();
        if sources.ncols() != d {
            return Err(Error::mismatch("scm sources", d, sources.ncols()));
        }
        let mut z = DMatrix::zeros(sources.nrows(), d);
        let scales: Vec<f64> = self.variances.iter().map(|v| v.sqrt()).collect();
        let parents: Vec<Vec<usize>> = (0..d).map(|i| self.graph.parents(i)).collect();
        for r in 0..sources.nrows() {
            for &i in self.graph.order() {
                let mut acc = scales[i] * sources[(r, i)];
                for &p in &parents[i] {
                    acc += self.weights[(i, p)] * z[(r, p)];
                }
                z[(r, i)] = acc;
            }
        }
        Ok(z)
    }

    /// Standardised i.i.d. sources, one seeded stream per node.
    pub fn sample_sources(&self, n_samples: usize, seed: u64) -> DMatrix<f64> {
        let d = self.node_count();
        let mut e = DMatrix::zeros(n_samples, d);
        for i in 0..d {
            let mut rng = seed::rng(seed, &[i as u64]);
            let dist = self.distributions[i];
            for r in 0..n_samples {
                e[(r, i)] = dist.sample(&mut rng);
            }
        }
        e
    }

    /// Returns `(Z, E)`: latents and the standardised sources that generated them.
    pub fn sample(&self, n_samples: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be positive".into()));
        }
        let e = self.sample_sources(n_samples, seed);
        let z = self.propagate(&e)?;
        Ok((z, e))
    }
}

/// Linear SCM whose sources are entangled as `ε̂ = U ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct InexactScm {
    base: LinearScm,
    entanglement: DMatrix<f64>,
}

impl InexactScm {
    pub fn new(base: LinearScm, entanglement: DMatrix<f64>) -> Result<Self> {
        let d = base.node_count();
        if entanglement.shape() != (d, d) {
            return Err(Error::mismatch(
                "entanglement",
                format!("{d}x{d}"),
                format!("{:?}", entanglement.shape()),
            ));
        }
        check_unit_rows(&entanglement)?;
        Ok(InexactScm { base, entanglement })
    }

    /// Entanglement with diagonal `√(1 − α)` and off-diagonal mass `α` spread
    /// in a random direction on every row, so that `α(U) = α` exactly.
    pub fn random_entanglement<R: Rng + ?Sized>(d: usize, alpha: f64, rng: &mut R) -> Result<DMatrix<f64>> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("alpha {alpha} outside [0, 1]")));
        }
        let mut u = DMatrix::zeros(d, d);
        for i in 0..d {
            if d == 1 {
                u[(0, 0)] = 1.0;
                break;
            }
            let mut off: Vec<f64> = (0..d - 1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = off.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            off.iter_mut().for_each(|x| *x *= alpha.sqrt() / norm);
            let mut it = off.into_iter();
            for j in 0..d {
                u[(i, j)] = if i == j {
                    (1.0 - alpha).sqrt()
                } else {
                    it.next().unwrap_or(0.0)
                };
            }
            let n = u.row(i).norm();
            u.row_mut(i).scale_mut(1.0 / n);
        }
        Ok(u)
    }

    pub fn base(&self) -> &LinearScm {
        &self.base
    }

    pub fn entanglement(&self) -> &DMatrix<f64> {
        &self.entanglement
    }

    pub fn alpha(&self) -> f64 {
        mic_of_entanglement(&self.entanglement).expect("validated at construction")
    }

    /// Returns `(Z, E)` where `E` holds the raw, pre-entanglement sources.
    pub fn sample(&self, n_samples: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be positive".into()));
        }
        let e = self.base.sample_sources(n_samples, seed);
        let entangled = &e * self.entanglement.transpose();
        let z = self.base.propagate(&entangled)?;
        Ok((z, e))
    }
}

fn check_unit_rows(u: &DMatrix<f64>) -> Result<()> {
    for i in 0..u.nrows() {
        let norm = u.row(i).norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_ROW_TOL {
            return Err(Error::InvalidEntanglement { row: i, norm });
        }
    }
    Ok(())
}

/// `α(U) = (1/d₀) Σ_{i≠j} U_ij²` for a unit-row entanglement matrix.
pub fn mic_of_entanglement(u: &DMatrix<f64>) -> Result<f64> {
    if u.nrows() != u.ncols() || u.nrows() == 0 {
        return Err(Error::mismatch("entanglement", "square non-empty", format!("{:?}", u.shape())));
    }
    check_unit_rows(u)?;
    Ok(off_diagonal_mass(u))
}

/// `(1/d) Σ_{i≠j} m_ij²` without any row-norm check.
pub(crate) fn off_diagonal_mass(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..m.ncols() {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    acc / d as f64
}

/// Full-column-rank map from `d₀` latents to `n` observed benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    matrix: DMatrix<f64>,
}

impl MixingMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() == 0 || matrix.nrows() < matrix.ncols() {
            return Err(Error::InvalidInput(format!(
                "mixing matrix {:?} cannot have full column rank",
                matrix.shape()
            )));
        }
        if linalg::rank(&matrix) < matrix.ncols() {
            return Err(Error::InvalidInput("mixing matrix is not full column rank".into()));
        }
        Ok(MixingMatrix { matrix })
    }

    /// Standard Gaussian entries; redrawn until full column rank.
    pub fn random<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Self> {
        for _ in 0..16 {
            let m = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            if let Ok(g) = MixingMatrix::new(m) {
                return Ok(g);
            }
        }
        Err(Error::InvalidInput(format!("cannot draw a full-rank {n}x{d} mixing matrix")))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn latent_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn observed_dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `H = (GᵀG)^{-1} Gᵀ`.
    pub fn unmixing(&self) -> DMatrix<f64> {
        let gtg = self.matrix.transpose() * &self.matrix;
        gtg.try_inverse().expect("full column rank") * self.matrix.transpose()
    }
}

/// `X = Z Gᵀ`.
pub fn mix_observations(g: &MixingMatrix, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != g.latent_dim() {
        return Err(Error::mismatch("mix_observations", g.latent_dim(), z.ncols()));
    }
    Ok(z * g.matrix().transpose())
}

/// JSON form of an SCM: `{d0, edges, weights, variances, distributions, entanglement}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub d0: usize,
    pub edges: Vec<[usize; 2]>,
    pub weights: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    pub distributions: Vec<SourceDistribution>,
    #[serde(default)]
    pub entanglement: Option<Vec<Vec<f64>>>,
}

impl ScmSpec {
    pub fn from_scm(scm: &LinearScm, entanglement: Option<&DMatrix<f64>>) -> Self {
        ScmSpec {
            d0: scm.node_count(),
            edges: scm.graph().edges().map(|(p, c)| [p, c]).collect(),
            weights: matrix_json::to_rows(scm.weights()),
            variances: scm.variances().to_vec(),
            distributions: scm.distributions().to_vec(),
            entanglement: entanglement.map(matrix_json::to_rows),
        }
    }

    pub fn from_inexact(scm: &InexactScm) -> Self {
        ScmSpec::from_scm(scm.base(), Some(scm.entanglement()))
    }

    pub fn to_linear(&self) -> Result<LinearScm> {
        let graph = CausalGraph::new(self.d0, self.edges.iter().map(|e| (e[0], e[1])))?;
        let weights = matrix_json::from_rows(&self.weights).map_err(Error::InvalidInput)?;
        LinearScm::new(graph, weights, self.variances.clone(), self.distributions.clone())
    }

    pub fn to_inexact(&self) -> Result<Option<InexactScm>> {
        let Some(u) = &self.entanglement else {
            return Ok(None);
        };
        let u = matrix_json::from_rows(u).map_err(Error::InvalidInput)?;
        Ok(Some(InexactScm::new(self.to_linear()?, u)?))
    }
}

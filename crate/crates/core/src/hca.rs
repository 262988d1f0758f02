//! Hierarchical component analysis (HCA).
//!
//! Input: per-domain ICA unmixing matrices `M_k` (`d₀ × n`), each equal up to
//! an unknown row permutation (and row scaling) to `B_k H`, where `H` is the
//! shared unmixing of the latent factors and `B_k` is triangular. HCA searches
//! over row permutations of every `M_k`, recovers a candidate `Ĥ` by
//! row-residual extraction, refits triangular `B̂_k`, and keeps the candidate
//! with the smallest maximum inexactness coefficient (MIC).
//!
//! # Triangularity convention
//!
//! `B_k` is **lower**-triangular and rows are in topological order: row `i`
//! of `B_k H` lies in `span(h_0, …, h_i)`. Residual extraction for row `i`
//! therefore projects out the *leading* rows `0..i` of each permuted `M'_k`.
//! The upper-triangular presentation that orthogonalizes against trailing
//! rows is the same procedure with row indices reversed
//! (`i ↦ d₀ − 1 − i`); permutations, `Ĥ` and `B̂_k` map across by that
//! reversal and nothing else changes.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix_json;
use crate::scm::off_diagonal_mass;
use crate::seed;

/// Stacked residual rows below this norm count as vanished.
pub const DEGENERATE_ROW_NORM: f64 = 1e-12;

/// Largest `d₀` for which the permutation list is materialised.
pub const MAX_SEARCH_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcaConfig {
    /// Maximum number of permutation tuples to evaluate. The search is
    /// exhaustive when `(d₀!)^K` fits in the budget.
    pub budget: u64,
    pub parallel: bool,
    /// Gram–Schmidt the rows of `Ĥ` (in order) before the triangular refit.
    pub orthonormalize_h: bool,
    /// Seeds the tuple subsample when the search is not exhaustive.
    pub seed: u64,
}

impl Default for HcaConfig {
    fn default() -> Self {
        HcaConfig {
            budget: 1_000_000,
            parallel: true,
            orthonormalize_h: false,
            seed: 0,
        }
    }
}

/// Row-wise orthogonal projection: every row of each `A_k` is replaced by
/// its residual off `span{(A_k)_s : s ∈ S}`. Rows indexed by `S` vanish.
pub fn ortho_proj(subset: &[usize], mats: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    mats.iter()
        .map(|a| {
            if subset.is_empty() {
                return a.clone();
            }
            let mut spanning = DMatrix::zeros(subset.len(), a.ncols());
            for (r, &s) in subset.iter().enumerate() {
                spanning.set_row(r, &a.row(s));
            }
            let q = linalg::row_space_basis(&spanning);
            a - (a * q.transpose()) * &q
        })
        .collect()
}

/// Residual of row `row` of `a` after projecting out rows `0..row`.
fn leading_residual(a: &DMatrix<f64>, row: usize) -> DVector<f64> {
    let r = a.row(row).transpose();
    if row == 0 {
        return r;
    }
    let q = linalg::row_space_basis(&a.rows(0, row).into_owned());
    let coeff = &q * &r;
    r - q.transpose() * coeff
}

/// Principal right singular vector of the stacked rows.
///
/// Returns `(h, rank1_error)` with `rank1_error = 1 − σ₁² / Σσᵢ²` and `h`
/// signed so its largest-magnitude entry is positive.
pub fn extract_direction(rows: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    if rows.nrows() == 0 || (0..rows.nrows()).all(|i| rows.row(i).norm() < DEGENERATE_ROW_NORM) {
        return Err(Error::DegenerateResidual);
    }
    let (_, s, vt) = linalg::svd(rows);
    let total: f64 = s.iter().map(|v| v * v).sum();
    let rank1_error = (1.0 - s[0] * s[0] / total).clamp(0.0, 1.0);
    let mut h: Vec<f64> = vt.row(0).iter().copied().collect();
    linalg::canonical_sign(&mut h);
    Ok((DVector::from_vec(h), rank1_error))
}

/// `argmin ‖M − B H‖_F` over lower-triangular `B`, row by row: row `i` of
/// `M` is regressed on rows `0..=i` of `H`.
pub fn fit_triangular(m: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = h.nrows();
    if m.shape() != h.shape() {
        return Err(Error::mismatch(
            "fit_triangular",
            format!("{:?}", h.shape()),
            format!("{:?}", m.shape()),
        ));
    }
    if linalg::rank(h) < d {
        return Err(Error::IllPosedFit);
    }
    let mut b = DMatrix::zeros(d, d);
    for i in 0..d {
        let design = h.rows(0, i + 1).transpose();
        let target = DMatrix::from_iterator(m.ncols(), 1, m.row(i).iter().copied());
        let (coef, _) = linalg::lstsq(&design, &target);
        for j in 0..=i {
            b[(i, j)] = coef[j];
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicScore {
    pub alpha: f64,
    pub per_domain: Vec<f64>,
    /// `J_k = B̂_k Ĥ M_kᵀ (M_k M_kᵀ)^{-1}` before row normalisation.
    pub j_mats: Vec<DMatrix<f64>>,
}

/// MIC of the fitted model: `α = max_k α_k` with `α_k` the off-diagonal
/// mass of the row-normalised `J_k`.
pub fn compute_mic(m_mats: &[DMatrix<f64>], b_hats: &[DMatrix<f64>], h_hat: &DMatrix<f64>) -> Result<MicScore> {
    if m_mats.len() != b_hats.len() || m_mats.is_empty() {
        return Err(Error::mismatch("compute_mic domains", m_mats.len(), b_hats.len()));
    }
    let mut per_domain = Vec::with_capacity(m_mats.len());
    let mut j_mats = Vec::with_capacity(m_mats.len());
    for (k, (m, b)) in m_mats.iter().zip(b_hats).enumerate() {
        let d = m.nrows();
        if b.shape() != (d, d) || h_hat.shape() != m.shape() {
            return Err(Error::mismatch(
                "compute_mic shapes",
                format!("B {d}x{d}, H {:?}", m.shape()),
                format!("B {:?}, H {:?}", b.shape(), h_hat.shape()),
            ));
        }
        let gram = m * m.transpose();
        let sv = linalg::singular_values(&gram);
        if sv.is_empty() || !(sv[sv.len() - 1] > sv[0] * 1e-14) {
            return Err(Error::SingularDomain { domain: k });
        }
        let gram_inv = gram.try_inverse().ok_or(Error::SingularDomain { domain: k })?;
        let j = b * h_hat * m.transpose() * gram_inv;
        let mut jn = j.clone();
        for i in 0..d {
            let norm = j.row(i).norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::DegenerateMic { domain: k, row: i });
            }
            jn.row_mut(i).scale_mut(1.0 / norm);
        }
        per_domain.push(off_diagonal_mass(&jn));
        j_mats.push(j);
    }
    let alpha = per_domain.iter().copied().fold(0.0, f64::max);
    Ok(MicScore {
        alpha,
        per_domain,
        j_mats,
    })
}

/// `‖M_k − B_k H‖_F / ‖M_k‖_F`.
pub fn unmixing_recovery_error(m: &DMatrix<f64>, b: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    let denom = m.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (m - b * h).norm() / denom
}

/// Everything the inner loop produces for one permutation tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub permuted: Vec<DMatrix<f64>>,
    pub h_hat: DMatrix<f64>,
    pub b_hats: Vec<DMatrix<f64>>,
    pub mic: MicScore,
    pub rank1_errors: Vec<f64>,
}

fn gram_schmidt_rows(h: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = h.clone();
    for i in 0..out.nrows() {
        let mut v = out.row(i).into_owned();
        for j in 0..i {
            let q = out.row(j).into_owned();
            let c = v.dot(&q);
            v -= q * c;
        }
        let n = v.norm();
        if n > 0.0 {
            v /= n;
        }
        out.set_row(i, &v);
    }
    out
}

/// Runs the HCA inner loop for a fixed tuple of row permutations.
/// `perms[k][r]` is the row of `M_k` placed at position `r`.
pub fn evaluate_permutation(m_mats: &[DMatrix<f64>], perms: &[Vec<usize>], orthonormalize_h: bool) -> Result<Candidate> {
    let (d, n) = m_mats[0].shape();
    let permuted: Vec<DMatrix<f64>> = m_mats
        .iter()
        .zip(perms)
        .map(|(m, p)| linalg::permute_rows(m, p))
        .collect();
    let mut h_hat = DMatrix::zeros(d, n);
    let mut rank1_errors = Vec::with_capacity(d);
    for i in 0..d {
        let mut stacked = DMatrix::zeros(permuted.len(), n);
        for (k, m) in permuted.iter().enumerate() {
            stacked.set_row(k, &leading_residual(m, i).transpose());
        }
        let (h, err) = extract_direction(&stacked)?;
        h_hat.set_row(i, &h.transpose());
        rank1_errors.push(err);
    }
    if orthonormalize_h {
        h_hat = gram_schmidt_rows(&h_hat);
    }
    let b_hats = permuted
        .iter()
        .map(|m| fit_triangular(m, &h_hat))
        .collect::<Result<Vec<_>>>()?;
    let mic = compute_mic(&permuted, &b_hats, &h_hat)?;
    Ok(Candidate {
        permuted,
        h_hat,
        b_hats,
        mic,
        rank1_errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcaSolution {
    /// `d₀ × n` shared unmixing; row `i` recovers factor `i` up to a
    /// lower-triangular mixture of factors `0..=i`.
    #[serde(with = "matrix_json")]
    pub h_hat: DMatrix<f64>,
    #[serde(with = "matrix_json::vec")]
    pub b_hats: Vec<DMatrix<f64>>,
    pub permutations: Vec<Vec<usize>>,
    pub mic: f64,
    pub per_domain_alpha: Vec<f64>,
    pub rank1_errors: Vec<f64>,
    pub unmixing_errors: Vec<f64>,
    pub tuples_evaluated: u64,
    pub tuples_total: Option<u64>,
    pub exhaustive: bool,
    pub orthonormalized: bool,
}

impl HcaSolution {
    /// Recovered factors `X Ĥᵀ` (no centering).
    pub fn factors(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * self.h_hat.transpose()
    }
}

fn tuple_total(d: usize, k: usize) -> Option<u64> {
    let fact: u64 = (1..=d as u64).product();
    let mut total: u64 = 1;
    for _ in 0..k {
        total = total.checked_mul(fact)?;
    }
    Some(total)
}

fn decode_tuple(mut idx: u64, k: usize, perms: &[Vec<usize>]) -> Vec<usize> {
    let base = perms.len() as u64;
    let mut out = vec![0usize; k];
    for slot in out.iter_mut().rev() {
        *slot = (idx % base) as usize;
        idx /= base;
    }
    out
}

fn score(c: &Result<Candidate>) -> f64 {
    match c {
        Ok(c) if c.mic.alpha.is_finite() => c.mic.alpha,
        _ => f64::INFINITY,
    }
}

/// Searches permutation tuples for the minimum-MIC HCA solution.
///
/// Ties go to the lexicographically smallest tuple; branches whose residuals
/// degenerate are scored `+∞` rather than aborting the search.
pub fn hca_search(m_mats: &[DMatrix<f64>], config: &HcaConfig) -> Result<HcaSolution> {
    let k = m_mats.len();
    if k == 0 {
        return Err(Error::InvalidInput("hca_search needs at least one domain".into()));
    }
    if config.budget < 1 {
        return Err(Error::InvalidInput("search budget must be at least 1".into()));
    }
    let (d, n) = m_mats[0].shape();
    if d == 0 || d > n {
        return Err(Error::mismatch("hca_search", format!("0 < d0 <= n = {n}"), d));
    }
    if let Some(m) = m_mats.iter().find(|m| m.shape() != (d, n)) {
        return Err(Error::mismatch("hca_search shapes", format!("{d}x{n}"), format!("{:?}", m.shape())));
    }
    if d > MAX_SEARCH_DIM {
        return Err(Error::InvalidInput(format!(
            "permutation search supports d0 <= {MAX_SEARCH_DIM}, got {d}"
        )));
    }
    let perms = linalg::permutations(d);
    let total = tuple_total(d, k);
    let exhaustive = total.is_some_and(|t| t <= config.budget);

    // Candidate tuples as indices into `perms`, in lexicographic order.
    let tuples: Vec<Vec<usize>> = if exhaustive {
        Vec::new()
    } else {
        let mut rng = seed::rng(config.seed, &[k as u64, d as u64]);
        let mut set: BTreeSet<Vec<usize>> = BTreeSet::new();
        set.insert(vec![0; k]);
        let mut draws = 0u64;
        while (set.len() as u64) < config.budget && draws < config.budget.saturating_mul(4) {
            set.insert((0..k).map(|_| rng.random_range(0..perms.len())).collect());
            draws += 1;
        }
        set.into_iter().collect()
    };
    let count = if exhaustive { total.expect("checked") } else { tuples.len() as u64 };
    let tuple_at = |i: u64| -> Vec<usize> {
        if exhaustive {
            decode_tuple(i, k, &perms)
        } else {
            tuples[i as usize].clone()
        }
    };
    let eval = |i: u64| -> (f64, u64) {
        let t = tuple_at(i);
        let ps: Vec<Vec<usize>> = t.iter().map(|&p| perms[p].clone()).collect();
        (score(&evaluate_permutation(m_mats, &ps, config.orthonormalize_h)), i)
    };
    let better = |a: (f64, u64), b: (f64, u64)| -> (f64, u64) {
        match a.0.total_cmp(&b.0) {
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal => {
                if a.1 <= b.1 {
                    a
                } else {
                    b
                }
            }
        }
    };
    let best = if config.parallel {
        (0..count)
            .into_par_iter()
            .map(eval)
            .reduce(|| (f64::INFINITY, u64::MAX), better)
    } else {
        (0..count).map(eval).fold((f64::INFINITY, u64::MAX), better)
    };
    if !best.0.is_finite() {
        return Err(Error::NoValidSolution);
    }
    let t = tuple_at(best.1);
    let permutations: Vec<Vec<usize>> = t.iter().map(|&p| perms[p].clone()).collect();
    let cand = evaluate_permutation(m_mats, &permutations, config.orthonormalize_h)?;
    let unmixing_errors = cand
        .permuted
        .iter()
        .zip(&cand.b_hats)
        .map(|(m, b)| unmixing_recovery_error(m, b, &cand.h_hat))
        .collect();
    Ok(HcaSolution {
        h_hat: cand.h_hat,
        b_hats: cand.b_hats,
        permutations,
        mic: cand.mic.alpha,
        per_domain_alpha: cand.mic.per_domain,
        rank1_errors: cand.rank1_errors,
        unmixing_errors,
        tuples_evaluated: count,
        tuples_total: total,
        exhaustive,
        orthonormalized: config.orthonormalize_h,
    })
}

/// Largest forbidden-side entry of `P = Ĥ G`, relative to its row: the
/// maximum over rows `i` of `max_{j>i} |P_ij| / max_j |P_ij|`. Zero when `P`
/// is lower triangular.
pub fn triangularity_violation(p: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..p.nrows() {
        let row = p.row(i);
        let scale = row.amax();
        if scale == 0.0 {
            continue;
        }
        let upper = (i + 1..p.ncols()).map(|j| row[j].abs()).fold(0.0, f64::max);
        worst = worst.max(upper / scale);
    }
    worst
}

/// Per-domain weights read off `B̂_k = S_k Ω_k^{-1/2} (I − A_k)`, where the
/// diagonal sign matrix `S_k` absorbs ICA's arbitrary row signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredDomain {
    /// Strictly lower-triangular `A_k`; `A_k[i][j]` is the weight of `z_j → z_i`.
    #[serde(with = "matrix_json")]
    pub weights: DMatrix<f64>,
    /// Source variances `σ_i = diag(B̂_k)^{-2}`.
    pub variances: Vec<f64>,
    pub row_signs: Vec<f64>,
}

impl RecoveredDomain {
    pub fn noise_scales(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }

    /// Rebuilds `B̂ = S Ω^{-1/2} (I − A)`.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let d = self.variances.len();
        let mut b = DMatrix::identity(d, d) - &self.weights;
        for i in 0..d {
            let s = self.row_signs[i] / self.variances[i].sqrt();
            b.row_mut(i).scale_mut(s);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredScm {
    pub domains: Vec<RecoveredDomain>,
}

pub fn recover_graph_weights(b_hats: &[DMatrix<f64>]) -> Result<RecoveredScm> {
    let mut domains = Vec::with_capacity(b_hats.len());
    for (k, b) in b_hats.iter().enumerate() {
        let d = b.nrows();
        if b.ncols() != d {
            return Err(Error::mismatch("recover_graph_weights", "square B", format!("{:?}", b.shape())));
        }
        let mut weights = DMatrix::zeros(d, d);
        let mut variances = Vec::with_capacity(d);
        let mut row_signs = Vec::with_capacity(d);
        for i in 0..d {
            let diag = b[(i, i)];
            if diag == 0.0 || !diag.is_finite() {
                return Err(Error::NonInvertibleNode { domain: k, node: i });
            }
            variances.push(1.0 / (diag * diag));
            row_signs.push(diag.signum());
            for j in 0..i {
                weights[(i, j)] = -b[(i, j)] / diag;
            }
        }
        domains.push(RecoveredDomain {
            weights,
            variances,
            row_signs,
        });
    }
    Ok(RecoveredScm { domains })
}

/// Graphviz rendering of one recovered domain: nodes `z1..zd` labelled with
/// their structural equation, edges labelled with weights.
pub fn to_dot(domain: &RecoveredDomain, name: &str) -> String {
    let d = domain.variances.len();
    let scales = domain.noise_scales();
    let mut out = format!("digraph \"{}\" {{\n  rankdir=LR;\n", name.replace('"', "'"));
    for i in 0..d {
        let mut terms: Vec<String> = (0..i)
            .map(|j| format!("{:.3} z{}", domain.weights[(i, j)], j + 1))
            .collect();
        terms.push(format!("{:.3} e{}", scales[i], i + 1));
        out.push_str(&format!(
            "  z{} [label=\"z{} = {}\"];\n",
            i + 1,
            i + 1,
            terms.join(" + ")
        ));
    }
    for i in 0..d {
        for j in 0..i {
            out.push_str(&format!(
                "  z{} -> z{} [label=\"{:.3}\"];\n",
                j + 1,
                i + 1,
                domain.weights[(i, j)]
            ));
        }
    }
    out.push_str("}\n");
    out
}

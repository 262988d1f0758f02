//! Missing-entry imputation: masks, soft-impute, block completion, and the
//! global-vs-local comparison harness.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DomainCollection;
use crate::error::{Error, Result};
use crate::linalg;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    pub values: DMatrix<f64>,
    /// `true` where the entry is observed.
    pub observed: DMatrix<bool>,
}

impl MaskedMatrix {
    pub fn new(values: DMatrix<f64>, observed: DMatrix<bool>) -> Result<Self> {
        if values.shape() != observed.shape() {
            return Err(Error::mismatch(
                "mask shape",
                format!("{:?}", values.shape()),
                format!("{:?}", observed.shape()),
            ));
        }
        Ok(MaskedMatrix { values, observed })
    }

    pub fn fully_observed(values: DMatrix<f64>) -> Self {
        let observed = DMatrix::from_element(values.nrows(), values.ncols(), true);
        MaskedMatrix { values, observed }
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn hidden_count(&self) -> usize {
        self.observed.len() - self.observed_count()
    }

    pub fn hidden_fraction(&self) -> f64 {
        self.hidden_count() as f64 / self.observed.len().max(1) as f64
    }

    /// Mask as CSV of `0/1` (1 = observed), no header.
    pub fn mask_csv(&self) -> String {
        let mut s = String::new();
        for row in self.observed.row_iter() {
            let cells: Vec<&str> = row.iter().map(|&o| if o { "1" } else { "0" }).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// RMSE of `estimate` against the stored values over hidden entries;
    /// zero when nothing is hidden.
    pub fn hidden_rmse(&self, estimate: &DMatrix<f64>) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, &o) in self.observed.iter().enumerate() {
            if !o {
                sum += (self.values[i] - estimate[i]).powi(2);
                count += 1;
            }
        }
        if count == 0 { 0.0 } else { (sum / count as f64).sqrt() }
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")))
    }
}

/// Hides every entry independently with probability `p`.
pub fn mask_random(x: &DMatrix<f64>, p: f64, seed: u64) -> Result<MaskedMatrix> {
    check_probability(p)?;
    let mut rng = seed::rng(seed, &[]);
    let (rows, cols) = x.shape();
    let mut observed = DMatrix::from_element(rows, cols, true);
    // row-major draw order
    for r in 0..rows {
        for c in 0..cols {
            observed[(r, c)] = rng.random::<f64>() >= p;
        }
    }
    MaskedMatrix::new(x.clone(), observed)
}

/// Keeps `observed_cols` whole and hides the same `round(p·N)` rows,
/// drawn without replacement, in every other column.
pub fn mask_block(x: &DMatrix<f64>, observed_cols: &[usize], p: f64, seed: u64) -> Result<MaskedMatrix> {
    check_probability(p)?;
    let (rows, cols) = x.shape();
    if let Some(&c) = observed_cols.iter().find(|&&c| c >= cols) {
        return Err(Error::InvalidInput(format!("observed column {c} out of range 0..{cols}")));
    }
    let hidden = (p * rows as f64).round() as usize;
    let mut rng = seed::rng(seed, &[]);
    let hidden_rows = index::sample(&mut rng, rows, hidden);
    let mut observed = DMatrix::from_element(rows, cols, true);
    for c in (0..cols).filter(|c| !observed_cols.contains(c)) {
        for r in hidden_rows.iter() {
            observed[(r, c)] = false;
        }
    }
    MaskedMatrix::new(x.clone(), observed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnrConfig {
    pub max_iter: usize,
    /// Stop when `‖Z_{k+1} − Z_k‖_F / max(‖Z_k‖_F, ε) < tol`.
    pub tol: f64,
}

impl Default for NnrConfig {
    fn default() -> Self {
        NnrConfig { max_iter: 1000, tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnrResult {
    #[serde(with = "crate::matrix_json")]
    pub completed: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `½‖P_Ω(X − Z)‖² + λ‖Z‖_*` before the first and after every iteration.
    pub objective_history: Vec<f64>,
    /// Columns with no observed entry; filled with the row means of the
    /// observed entries.
    pub unidentifiable_columns: Vec<usize>,
}

fn soft_threshold(m: &DMatrix<f64>, lambda: f64) -> (DMatrix<f64>, f64) {
    // tall inputs: SVD of the small R factor
    let (u, s, vt) = if m.nrows() > 2 * m.ncols() {
        let qr = m.clone().qr();
        let (ur, s, vt) = linalg::svd(&qr.r());
        (qr.q() * ur, s, vt)
    } else {
        linalg::svd(m)
    };
    let shrunk: Vec<f64> = s.iter().map(|v| (v - lambda).max(0.0)).collect();
    let keep = shrunk.iter().take_while(|&&v| v > 0.0).count();
    if keep == 0 {
        return (DMatrix::zeros(m.nrows(), m.ncols()), 0.0);
    }
    let us = DMatrix::from_fn(m.nrows(), keep, |r, c| u[(r, c)] * shrunk[c]);
    (us * vt.rows(0, keep), shrunk.iter().sum())
}

fn objective(m: &MaskedMatrix, z: &DMatrix<f64>, lambda: f64, nuclear: f64) -> f64 {
    let mut fit = 0.0;
    for (i, &o) in m.observed.iter().enumerate() {
        if o {
            fit += (m.values[i] - z[i]).powi(2);
        }
    }
    0.5 * fit + lambda * nuclear
}

fn nuclear_norm(z: &DMatrix<f64>) -> f64 {
    linalg::singular_values(z).sum()
}

/// Soft-impute with penalty `lambda`, started from `init` (zeros if absent).
pub fn nnr_complete_from(
    m: &MaskedMatrix,
    lambda: f64,
    config: &NnrConfig,
    init: Option<&DMatrix<f64>>,
) -> Result<NnrResult> {
    if m.observed_count() == 0 {
        return Err(Error::InvalidInput("completion needs at least one observed entry".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be non-negative, got {lambda}")));
    }
    let (rows, cols) = m.values.shape();
    let empty: Vec<usize> = (0..cols).filter(|&c| !m.observed.column(c).iter().any(|&o| o)).collect();
    let active: Vec<usize> = (0..cols).filter(|c| !empty.contains(c)).collect();
    let sub = MaskedMatrix {
        values: m.values.select_columns(&active),
        observed: m.observed.select_columns(&active),
    };
    let mut z = match init {
        Some(z0) if z0.shape() == (rows, cols) => z0.select_columns(&active),
        _ => DMatrix::zeros(rows, active.len()),
    };
    let mut history = vec![objective(&sub, &z, lambda, nuclear_norm(&z))];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=config.max_iter {
        iterations = it;
        let mut filled = z.clone();
        for (i, &o) in sub.observed.iter().enumerate() {
            if o {
                filled[i] = sub.values[i];
            }
        }
        let (next, nuclear) = soft_threshold(&filled, lambda);
        let obj = objective(&sub, &next, lambda, nuclear);
        let prev = *history.last().expect("seeded");
        debug_assert!(
            obj <= prev + 1e-9 * prev.abs().max(1.0),
            "soft-impute objective increased: {prev} -> {obj}"
        );
        history.push(obj);
        let change = (&next - &z).norm() / z.norm().max(f64::MIN_POSITIVE);
        z = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    let mut completed = DMatrix::zeros(rows, cols);
    for (k, &c) in active.iter().enumerate() {
        completed.column_mut(c).copy_from(&z.column(k));
    }
    for r in 0..rows {
        let observed: Vec<f64> = (0..cols).filter(|&c| m.observed[(r, c)]).map(|c| m.values[(r, c)]).collect();
        let row_mean = if observed.is_empty() {
            0.0
        } else {
            observed.iter().sum::<f64>() / observed.len() as f64
        };
        for &c in &empty {
            completed[(r, c)] = row_mean;
        }
    }
    for (i, &o) in m.observed.iter().enumerate() {
        if o {
            completed[i] = m.values[i];
        }
    }
    Ok(NnrResult {
        completed,
        converged,
        iterations,
        objective_history: history,
        unidentifiable_columns: empty,
    })
}

pub fn nnr_complete(m: &MaskedMatrix, lambda: f64, config: &NnrConfig) -> Result<NnrResult> {
    nnr_complete_from(m, lambda, config, None)
}

/// Penalty grid as fractions of the largest singular value of `P_Ω(X)`.
pub const DEFAULT_LAMBDA_FRACTIONS: [f64; 7] = [0.3, 0.1, 0.03, 0.01, 0.003, 0.001, 0.0001];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub validation_rmse: Vec<f64>,
}

/// Picks λ from `fractions · σ₁(P_Ω(X))` by holding out `holdout` of the
/// observed entries and scoring RMSE on them.
pub fn select_lambda(
    m: &MaskedMatrix,
    fractions: &[f64],
    holdout: f64,
    config: &NnrConfig,
    seed: u64,
) -> Result<LambdaSelection> {
    check_probability(holdout)?;
    if fractions.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    let mut zero_filled = m.values.clone();
    for (i, &o) in m.observed.iter().enumerate() {
        if !o {
            zero_filled[i] = 0.0;
        }
    }
    let top = linalg::singular_values(&zero_filled).iter().copied().fold(0.0, f64::max);
    let mut grid: Vec<f64> = fractions.iter().map(|f| f * top).collect();
    grid.sort_by(|a, b| b.total_cmp(a));

    let observed_idx: Vec<usize> = (0..m.observed.len()).filter(|&i| m.observed[i]).collect();
    let n_hold = ((holdout * observed_idx.len() as f64).round() as usize).min(observed_idx.len().saturating_sub(1));
    if n_hold == 0 {
        let lambda = *grid.last().expect("non-empty grid");
        return Ok(LambdaSelection {
            lambda,
            validation_rmse: vec![f64::NAN; grid.len()],
            grid,
        });
    }
    let mut rng = seed::rng(seed, &[]);
    let held: Vec<usize> = index::sample(&mut rng, observed_idx.len(), n_hold)
        .iter()
        .map(|k| observed_idx[k])
        .collect();
    let mut train = m.clone();
    for &i in &held {
        train.observed[i] = false;
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut warm: Option<DMatrix<f64>> = None;
    for &lambda in &grid {
        let res = nnr_complete_from(&train, lambda, config, warm.as_ref())?;
        let mse = held.iter().map(|&i| (res.completed[i] - m.values[i]).powi(2)).sum::<f64>() / held.len() as f64;
        scores.push(mse.sqrt());
        warm = Some(res.completed);
    }
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if *s < scores[b] { i } else { b });
    Ok(LambdaSelection {
        lambda: grid[best],
        grid,
        validation_rmse: scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    #[serde(with = "crate::matrix_json")]
    pub completed: DMatrix<f64>,
    pub complete_rows: usize,
    /// In-sample R² per hidden column, in column order.
    pub hidden_columns: Vec<usize>,
    pub r_squared: Vec<f64>,
    /// Hidden columns whose regression R² falls below [`WEAK_FIT_R2`].
    pub weak_columns: Vec<usize>,
}

pub const WEAK_FIT_R2: f64 = 0.5;

/// Rank-`r` completion for the block pattern: PCA of the observed columns on
/// complete rows, then each hidden column is regressed (with intercept) on
/// the principal coordinates.
pub fn block_complete(m: &MaskedMatrix, observed_cols: &[usize], r: usize) -> Result<BlockResult> {
    let (rows, cols) = m.values.shape();
    if let Some(&c) = observed_cols.iter().find(|&&c| c >= cols) {
        return Err(Error::InvalidInput(format!("observed column {c} out of range 0..{cols}")));
    }
    if r > observed_cols.len() {
        return Err(Error::InvalidInput(format!(
            "rank {r} exceeds the {} observed columns",
            observed_cols.len()
        )));
    }
    for &c in observed_cols {
        if m.observed.column(c).iter().any(|&o| !o) {
            return Err(Error::InvalidInput(format!("column {c} is listed as observed but has hidden entries")));
        }
    }
    let hidden_cols: Vec<usize> = (0..cols).filter(|c| !observed_cols.contains(c)).collect();
    let complete: Vec<usize> = (0..rows).filter(|&i| m.observed.row(i).iter().all(|&o| o)).collect();
    if complete.len() < r + 1 {
        return Err(Error::InsufficientData(format!(
            "block completion at rank {r} needs {} complete rows, got {}",
            r + 1,
            complete.len()
        )));
    }
    let xo = m.values.select_columns(observed_cols);
    let xo_c = xo.select_rows(&complete);
    let mean = linalg::column_means(&xo_c);
    let basis = if r == 0 {
        DMatrix::zeros(observed_cols.len(), 0)
    } else {
        let (_, _, vt) = linalg::svd(&linalg::center_columns(&xo_c, &mean));
        vt.rows(0, r).transpose()
    };
    let coords = linalg::center_columns(&xo, &mean) * &basis;
    let mut design = DMatrix::from_element(rows, r + 1, 1.0);
    design.columns_mut(0, r).copy_from(&coords);
    let train = design.select_rows(&complete);

    let mut completed = m.values.clone();
    let mut r_squared = Vec::with_capacity(hidden_cols.len());
    let mut weak = Vec::new();
    for &h in &hidden_cols {
        let y = DMatrix::from_iterator(complete.len(), 1, complete.iter().map(|&i| m.values[(i, h)]));
        let (beta, _) = linalg::lstsq(&train, &y);
        let fitted = &train * &beta;
        let ybar = y.mean();
        let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        let rss: f64 = (&y - fitted).norm_squared();
        let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
        if r2 < WEAK_FIT_R2 && r > 0 {
            weak.push(h);
        }
        r_squared.push(r2);
        let pred = &design * &beta;
        for i in 0..rows {
            if !m.observed[(i, h)] {
                completed[(i, h)] = pred[i];
            }
        }
    }
    Ok(BlockResult {
        completed,
        complete_rows: complete.len(),
        hidden_columns: hidden_cols,
        r_squared,
        weak_columns: weak,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MaskPattern {
    Random { p: f64 },
    Block { observed_cols: Vec<usize>, p: f64 },
}

impl MaskPattern {
    pub fn p(&self) -> f64 {
        match self {
            MaskPattern::Random { p } | MaskPattern::Block { p, .. } => *p,
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>, seed: u64) -> Result<MaskedMatrix> {
        match self {
            MaskPattern::Random { p } => mask_random(x, *p, seed),
            MaskPattern::Block { observed_cols, p } => mask_block(x, observed_cols, *p, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Solver {
    /// Soft-impute; `lambda: None` selects from the grid on a holdout split.
    Nnr {
        lambda: Option<f64>,
        #[serde(default)]
        config: NnrConfig,
    },
    Block { rank: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Summary { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub seed: u64,
    pub hidden: usize,
    pub global_rmse: f64,
    pub local_rmse: f64,
    pub global_lambda: Option<f64>,
    pub local_lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub target_domain: String,
    pub pattern: MaskPattern,
    pub p: f64,
    pub solver: Solver,
    pub repeats: usize,
    pub lambda_grid: Vec<f64>,
    pub global: Summary,
    pub local: Summary,
    /// Repeats in which the local RMSE is strictly below the global one.
    pub local_better: usize,
    pub per_repeat: Vec<RepeatResult>,
}

/// Returns the completed matrix and the λ used, if any.
fn solve(m: &MaskedMatrix, pattern: &MaskPattern, solver: &Solver, seed: u64) -> Result<(DMatrix<f64>, Option<f64>)> {
    match solver {
        Solver::Nnr { lambda, config } => {
            let lambda = match lambda {
                Some(l) => *l,
                None => select_lambda(m, &DEFAULT_LAMBDA_FRACTIONS, 0.1, config, seed)?.lambda,
            };
            Ok((nnr_complete(m, lambda, config)?.completed, Some(lambda)))
        }
        Solver::Block { rank } => {
            let cols = match pattern {
                MaskPattern::Block { observed_cols, .. } => observed_cols.clone(),
                MaskPattern::Random { .. } => {
                    return Err(Error::InvalidInput("block solver needs a block mask pattern".into()));
                }
            };
            Ok((block_complete(m, &cols, *rank)?.completed, None))
        }
    }
}

/// Masks the target domain, completes it once inside the stacked matrix of
/// all domains (global) and once on its own rows (local), and reports RMSE on
/// the hidden entries.
pub fn completion_experiment(
    collection: &DomainCollection,
    target_domain: &str,
    pattern: &MaskPattern,
    solver: &Solver,
    repeats: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let k = collection
        .position(target_domain)
        .ok_or_else(|| Error::InvalidInput(format!("unknown target domain {target_domain}")))?;
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be positive".into()));
    }
    let target = &collection.domains()[k].observations;
    let stacked = collection.stacked();
    let offset: usize = collection.domains()[..k].iter().map(|d| d.len()).sum();
    let results = (0..repeats)
        .into_par_iter()
        .map(|t| {
            let rs = seed::derive(seed, &[t as u64]);
            let local = pattern.apply(target, rs)?;
            let mut global_mask = DMatrix::from_element(stacked.nrows(), stacked.ncols(), true);
            global_mask.rows_mut(offset, target.nrows()).copy_from(&local.observed);
            let global = MaskedMatrix::new(stacked.clone(), global_mask)?;
            let (g_hat, g_lambda) = solve(&global, pattern, solver, seed::derive(rs, &[1]))?;
            let (l_hat, l_lambda) = solve(&local, pattern, solver, seed::derive(rs, &[2]))?;
            let g_target = g_hat.rows(offset, target.nrows()).into_owned();
            Ok(RepeatResult {
                seed: rs,
                hidden: local.hidden_count(),
                global_rmse: local.hidden_rmse(&g_target),
                local_rmse: local.hidden_rmse(&l_hat),
                global_lambda: g_lambda,
                local_lambda: l_lambda,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let g: Vec<f64> = results.iter().map(|r| r.global_rmse).collect();
    let l: Vec<f64> = results.iter().map(|r| r.local_rmse).collect();
    Ok(ExperimentReport {
        target_domain: target_domain.to_string(),
        p: pattern.p(),
        pattern: pattern.clone(),
        solver: solver.clone(),
        repeats,
        lambda_grid: DEFAULT_LAMBDA_FRACTIONS.to_vec(),
        global: Summary::of(&g),
        local: Summary::of(&l),
        local_better: results.iter().filter(|r| r.local_rmse < r.global_rmse).count(),
        per_repeat: results,
    })
}

//! Sigmoid scaling-law fits with an additive fine-tuning term, and
//! regression-adjusted treatment effects.
//!
//! Model: `Y ≈ L / (1 + exp(−k (ln C − ln C₀))) + τ T + b`.
//! Because `(L, k, b)` and `(−L, −k, b + L)` describe the same curve, fits are
//! reported with `k ≥ 0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const MIN_POINTS: usize = 6;

pub const IGNORABILITY_WARNING: &str = "ATE estimates assume conditional ignorability: given log pretraining \
compute, fine-tuning is independent of the potential outcomes. Unobserved confounders bias the estimate.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmoidFitConfig {
    /// Magnitudes of the starting slopes; both signs are tried.
    pub k_grid: Vec<f64>,
    /// Percentiles of `C` used as starting midpoints.
    pub c0_percentiles: Vec<f64>,
    pub max_iter: usize,
    /// Relative RSS decrease below which an accepted step ends the run.
    pub tol: f64,
    pub parallel: bool,
}

impl Default for SigmoidFitConfig {
    fn default() -> Self {
        SigmoidFitConfig {
            k_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            c0_percentiles: vec![10.0, 30.0, 50.0, 70.0, 90.0],
            max_iter: 500,
            tol: 1e-12,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingLawFit {
    pub l: f64,
    pub k: f64,
    pub c0: f64,
    /// Natural log of `c0`.
    pub log_c0: f64,
    pub b: f64,
    pub tau: f64,
    /// `τ` was pinned to 0 because `T` is constant.
    pub tau_fixed: bool,
    pub rss: f64,
    pub residual_rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Index of the winning start in the multistart grid.
    pub start: usize,
    pub starts: usize,
}

impl ScalingLawFit {
    pub fn predict(&self, c: f64, t: f64) -> f64 {
        self.predict_log(c.ln(), t)
    }

    pub fn predict_log(&self, log_c: f64, t: f64) -> f64 {
        self.l * logistic(self.k * (log_c - self.log_c0)) + self.tau * t + self.b
    }
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Parameter vector `(L, k, x₀, b, τ)` with `x₀ = ln C₀`.
type Params = [f64; 5];

struct Problem<'a> {
    x: &'a [f64],
    t: &'a [f64],
    y: &'a [f64],
    fit_tau: bool,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        if self.fit_tau { 5 } else { 4 }
    }

    fn residuals(&self, p: &Params) -> DVector<f64> {
        DVector::from_fn(self.x.len(), |i, _| {
            let f = p[0] * logistic(p[1] * (self.x[i] - p[2])) + p[3] + p[4] * self.t[i];
            self.y[i] - f
        })
    }

    fn jacobian(&self, p: &Params) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.x.len(), self.n_params());
        for i in 0..self.x.len() {
            let u = self.x[i] - p[2];
            let s = logistic(p[1] * u);
            let ds = s * (1.0 - s);
            j[(i, 0)] = s;
            j[(i, 1)] = p[0] * ds * u;
            j[(i, 2)] = -p[0] * ds * p[1];
            j[(i, 3)] = 1.0;
            if self.fit_tau {
                j[(i, 4)] = self.t[i];
            }
        }
        j
    }

    /// Least-squares `(L, b, τ)` for fixed `(k, x₀)`.
    fn linear_init(&self, k: f64, x0: f64) -> Params {
        let cols = if self.fit_tau { 3 } else { 2 };
        let design = DMatrix::from_fn(self.x.len(), cols, |i, c| match c {
            0 => logistic(k * (self.x[i] - x0)),
            1 => 1.0,
            _ => self.t[i],
        });
        let (beta, _) = linalg::lstsq(&design, &DMatrix::from_column_slice(self.y.len(), 1, self.y));
        [beta[0], k, x0, beta[1], if self.fit_tau { beta[2] } else { 0.0 }]
    }

    /// Levenberg–Marquardt from `start`. Returns the final parameters, RSS,
    /// iterations and whether the stopping rule fired.
    fn levenberg_marquardt(&self, start: Params, max_iter: usize, tol: f64) -> (Params, f64, usize, bool) {
        let np = self.n_params();
        let mut p = start;
        let mut rss = self.residuals(&p).norm_squared();
        let mut mu = 1e-3;
        for it in 1..=max_iter {
            if rss == 0.0 {
                return (p, rss, it - 1, true);
            }
            let j = self.jacobian(&p);
            let r = self.residuals(&p);
            let jtj = j.transpose() * &j;
            let g = j.transpose() * r;
            let mut accepted = false;
            while mu < 1e16 {
                let mut a = jtj.clone();
                for d in 0..np {
                    a[(d, d)] += mu * (jtj[(d, d)] + 1e-12);
                }
                let Some(step) = a.lu().solve(&g) else {
                    mu *= 10.0;
                    continue;
                };
                let mut cand = p;
                for d in 0..np {
                    cand[d] += step[d];
                }
                let cand_rss = self.residuals(&cand).norm_squared();
                if cand_rss.is_finite() && cand_rss <= rss {
                    let rel = (rss - cand_rss) / rss.max(f64::MIN_POSITIVE);
                    p = cand;
                    rss = cand_rss;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    if rel < tol {
                        return (p, rss, it, true);
                    }
                    break;
                }
                mu *= 10.0;
            }
            if !accepted {
                // no descent direction left at any damping
                return (p, rss, it, true);
            }
        }
        (p, rss, max_iter, false)
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn sigmoid_fit(c: &[f64], t: &[f64], y: &[f64], config: &SigmoidFitConfig) -> Result<ScalingLawFit> {
    let n = c.len();
    if t.len() != n || y.len() != n {
        return Err(Error::mismatch("sigmoid_fit lengths", n, format!("{} and {}", t.len(), y.len())));
    }
    if n < MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "sigmoid fit needs at least {MIN_POINTS} points, got {n}"
        )));
    }
    if let Some(bad) = c.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!("compute values must be positive, got {bad}")));
    }
    if y.iter().chain(t).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite outcome or treatment".into()));
    }
    if t.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("treatment flags must be 0 or 1".into()));
    }
    let x: Vec<f64> = c.iter().map(|v| v.ln()).collect();
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[n - 1] {
        return Err(Error::InvalidInput("all compute values are identical; the curve is not identifiable".into()));
    }
    if config.k_grid.is_empty() || config.c0_percentiles.is_empty() {
        return Err(Error::InvalidInput("empty multistart grid".into()));
    }
    let fit_tau = t.iter().any(|&v| v != t[0]);
    let problem = Problem { x: &x, t, y, fit_tau };

    let mut starts = Vec::new();
    for &k in &config.k_grid {
        for sign in [1.0, -1.0] {
            for &q in &config.c0_percentiles {
                starts.push((sign * k, percentile(&sorted, q)));
            }
        }
    }
    let run = |&(k, x0): &(f64, f64)| {
        let init = problem.linear_init(k, x0);
        problem.levenberg_marquardt(init, config.max_iter, config.tol)
    };
    let outcomes: Vec<_> = if config.parallel {
        starts.par_iter().map(run).collect()
    } else {
        starts.iter().map(run).collect()
    };
    // lowest RSS; earliest start wins ties
    let (best, (p, rss, iterations, converged)) = outcomes
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1 .1 < a.1 .1 { b } else { a })
        .expect("non-empty grid");

    let [mut l, mut k, x0, mut b, tau] = p;
    if k < 0.0 {
        l = -l;
        k = -k;
        b -= l;
    }
    Ok(ScalingLawFit {
        l,
        k,
        c0: x0.exp(),
        log_c0: x0,
        b,
        tau,
        tau_fixed: !fit_tau,
        rss,
        residual_rmse: (rss / n as f64).sqrt(),
        converged,
        iterations,
        start: best,
        starts: starts.len(),
    })
}

/// `E[Y | T = t, X = x]` for a scalar confounder `x`.
pub trait OutcomeModel {
    fn expected(&self, t: f64, x: f64) -> f64;
}

/// The confounder is `ln C`.
impl OutcomeModel for ScalingLawFit {
    fn expected(&self, t: f64, x: f64) -> f64 {
        self.predict_log(x, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    /// Backdoor-adjusted `E[Y|do(T=1)] − E[Y|do(T=0)]`.
    pub ate: f64,
    /// Difference in arm means, no adjustment.
    pub naive: f64,
    /// Size-weighted difference in means within quantile bins of `X`.
    pub stratified: Option<f64>,
    pub bins: usize,
    /// Bins lacking one of the arms, left out of the stratified estimate.
    pub bins_skipped: usize,
    pub treated: usize,
    pub control: usize,
    pub warning: String,
}

pub fn ate_backdoor(y: &[f64], t: &[f64], x: &[f64], model: &dyn OutcomeModel, bins: usize) -> Result<AteReport> {
    let n = y.len();
    if t.len() != n || x.len() != n {
        return Err(Error::mismatch("ate_backdoor lengths", n, format!("{} and {}", t.len(), x.len())));
    }
    let treated = t.iter().filter(|&&v| v == 1.0).count();
    let control = t.iter().filter(|&&v| v == 0.0).count();
    if treated + control != n {
        return Err(Error::InvalidInput("treatment flags must be 0 or 1".into()));
    }
    if treated == 0 || control == 0 {
        return Err(Error::InvalidInput("both treatment arms must be present".into()));
    }
    let ate = x.iter().map(|&xi| model.expected(1.0, xi) - model.expected(0.0, xi)).sum::<f64>() / n as f64;
    let naive = arm_difference((0..n).map(|i| (y[i], t[i])));

    let bins = bins.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut weighted = 0.0;
    let mut used = 0usize;
    let mut skipped = 0;
    for b in 0..bins {
        let members = &order[b * n / bins..(b + 1) * n / bins];
        let has_t = members.iter().any(|&i| t[i] == 1.0);
        let has_c = members.iter().any(|&i| t[i] == 0.0);
        if members.is_empty() || !has_t || !has_c {
            skipped += 1;
            continue;
        }
        weighted += members.len() as f64 * arm_difference(members.iter().map(|&i| (y[i], t[i])));
        used += members.len();
    }
    Ok(AteReport {
        ate,
        naive,
        stratified: (used > 0).then(|| weighted / used as f64),
        bins,
        bins_skipped: skipped,
        treated,
        control,
        warning: IGNORABILITY_WARNING.to_string(),
    })
}

fn arm_difference(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (y, t) in pairs {
        if t == 1.0 {
            s1 += y;
            n1 += 1;
        } else {
            s0 += y;
            n0 += 1;
        }
    }
    s1 / n1 as f64 - s0 / n0 as f64
}

/// Plot-ready rows for one benchmark: observed points followed by the fitted
/// curve for both arms on `grid_points` log-spaced compute values.
pub fn sweep_rows(
    benchmark: &str,
    fit: &ScalingLawFit,
    c: &[f64],
    t: &[f64],
    y: &[f64],
    grid_points: usize,
) -> Vec<(String, &'static str, f64, f64, f64)> {
    let mut rows: Vec<_> = (0..c.len())
        .map(|i| (benchmark.to_string(), "point", c[i], t[i], y[i]))
        .collect();
    let (lo, hi) = c
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v.ln()), b.max(v.ln())));
    let steps = grid_points.max(2);
    for arm in [0.0, 1.0] {
        for s in 0..steps {
            let lc = lo + (hi - lo) * s as f64 / (steps - 1) as f64;
            rows.push((benchmark.to_string(), "curve", lc.exp(), arm, fit.predict_log(lc, arm)));
        }
    }
    rows
}

pub fn sweep_csv(rows: &[(String, &'static str, f64, f64, f64)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["benchmark", "kind", "compute", "treated", "y"])?;
    for (b, kind, c, t, y) in rows {
        w.write_record([b.clone(), kind.to_string(), format!("{c:e}"), format!("{t}"), format!("{y}")])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

//! Per-domain linear ICA: PCA whitening with reduction to `d₀` dimensions,
//! then symmetric fixed-point FastICA on the whitened data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix_json;
use crate::seed;

/// Eigenvalues below this fraction of the largest count as zero.
pub const WHITEN_EIG_TOL: f64 = 1e-12;

/// `E[log cosh ν]` for a standard normal `ν`.
const GAUSS_LOGCOSH: f64 = 0.374_567_207_5;
/// `E[ν⁴ / 4]` for a standard normal `ν`.
const GAUSS_QUARTIC: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitening {
    /// `d₀ × n` map from centered observations to white coordinates.
    #[serde(with = "matrix_json")]
    pub matrix: DMatrix<f64>,
    pub mean: Vec<f64>,
    /// Full covariance spectrum, descending.
    pub eigenvalues: Vec<f64>,
}

impl Whitening {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::center_columns(x, &DVector::from_vec(self.mean.clone())) * self.matrix.transpose()
    }
}

/// Returns the whitening map and the whitened data, whose sample covariance
/// is the identity.
pub fn whiten(x: &DMatrix<f64>, d0: usize) -> Result<(Whitening, DMatrix<f64>)> {
    let (n_rows, n) = x.shape();
    if d0 == 0 || d0 > n {
        return Err(Error::mismatch("whiten", format!("1..={n} components"), d0));
    }
    if n_rows <= d0 {
        return Err(Error::InsufficientData(format!(
            "whitening {d0} components needs more than {d0} rows, got {n_rows}"
        )));
    }
    let cov = linalg::covariance(x);
    let (vals, vecs) = linalg::sym_eigen(&cov);
    let largest = vals[0];
    for i in 0..d0 {
        if !(vals[i] > WHITEN_EIG_TOL * largest) || largest <= 0.0 {
            return Err(Error::RankDeficient {
                index: i,
                value: vals[i],
                largest,
            });
        }
    }
    let mut w = DMatrix::zeros(d0, n);
    for i in 0..d0 {
        let mut v: Vec<f64> = vecs.column(i).iter().copied().collect();
        linalg::canonical_sign(&mut v);
        let s = 1.0 / vals[i].sqrt();
        for j in 0..n {
            w[(i, j)] = v[j] * s;
        }
    }
    let whitening = Whitening {
        matrix: w,
        mean: linalg::column_means(x).iter().copied().collect(),
        eigenvalues: vals.iter().copied().collect(),
    };
    let white = whitening.apply(x);
    Ok((whitening, white))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Logcosh,
    Cube,
}

impl Nonlinearity {
    /// `(g(u), g'(u))` for the fixed-point update.
    fn g(self, u: f64) -> (f64, f64) {
        match self {
            Nonlinearity::Logcosh => {
                let t = u.tanh();
                (t, 1.0 - t * t)
            }
            Nonlinearity::Cube => (u * u * u, 3.0 * u * u),
        }
    }

    /// Contrast `G` with `G' = g`.
    fn contrast(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Logcosh => {
                let a = u.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            Nonlinearity::Cube => u.powi(4) / 4.0,
        }
    }

    fn gaussian_contrast(self) -> f64 {
        match self {
            Nonlinearity::Logcosh => GAUSS_LOGCOSH,
            Nonlinearity::Cube => GAUSS_QUARTIC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaConfig {
    pub nonlinearity: Nonlinearity,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_true() -> bool {
    true
}

impl Default for IcaConfig {
    fn default() -> Self {
        IcaConfig {
            nonlinearity: Nonlinearity::Logcosh,
            max_iter: 500,
            tol: 1e-7,
            seed: 0,
            restarts: 5,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    /// Iteration at which each component's update first fell below `tol`
    /// (`max_iter` if it never did).
    pub component_iterations: Vec<usize>,
    pub final_deltas: Vec<f64>,
    pub restart: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaResult {
    /// `d₀ × n` unmixing matrix `M`, rows sorted by descending non-Gaussianity.
    #[serde(with = "matrix_json")]
    pub unmixing: DMatrix<f64>,
    /// `N × d₀` recovered sources `(X − mean) Mᵀ`.
    #[serde(with = "matrix_json")]
    pub sources: DMatrix<f64>,
    pub whitening: Whitening,
    /// Per-component non-Gaussianity `(E[G(s)] − E[G(ν)])²`, same order as rows.
    pub non_gaussianity: Vec<f64>,
    pub convergence: ConvergenceReport,
}

struct RestartOutcome {
    rotation: DMatrix<f64>,
    report: ConvergenceReport,
    scores: Vec<f64>,
}

fn symmetric_decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::inv_sqrt_spd(&(w * w.transpose())) * w
}

fn component_scores(nl: Nonlinearity, u: &DMatrix<f64>) -> Vec<f64> {
    let n = u.nrows() as f64;
    u.column_iter()
        .map(|c| {
            let e = c.iter().map(|&v| nl.contrast(v)).sum::<f64>() / n;
            (e - nl.gaussian_contrast()).powi(2)
        })
        .collect()
}

fn run_restart(white: &DMatrix<f64>, config: &IcaConfig, restart: usize) -> RestartOutcome {
    let (n_rows, d) = white.shape();
    let nf = n_rows as f64;
    let mut rng = seed::rng(config.seed, &[restart as u64]);
    let init = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut w = symmetric_decorrelate(&init);
    let mut component_iterations = vec![config.max_iter; d];
    let mut deltas = vec![f64::INFINITY; d];
    let mut iterations = 0;
    let mut converged = false;
    let mut gu = DMatrix::zeros(n_rows, d);
    for it in 1..=config.max_iter {
        iterations = it;
        let u = white * w.transpose();
        let mut mean_dg = vec![0.0; d];
        for j in 0..d {
            for r in 0..n_rows {
                let (g, dg) = config.nonlinearity.g(u[(r, j)]);
                gu[(r, j)] = g;
                mean_dg[j] += dg;
            }
            mean_dg[j] /= nf;
        }
        let mut next = gu.transpose() * white / nf;
        for j in 0..d {
            let row = w.row(j) * mean_dg[j];
            let mut target = next.row_mut(j);
            target -= row;
        }
        let next = symmetric_decorrelate(&next);
        for j in 0..d {
            deltas[j] = (1.0 - next.row(j).dot(&w.row(j)).abs()).abs();
            if deltas[j] < config.tol && component_iterations[j] == config.max_iter {
                component_iterations[j] = it;
            }
        }
        w = next;
        if deltas.iter().all(|&x| x < config.tol) {
            converged = true;
            break;
        }
    }
    let scores = component_scores(config.nonlinearity, &(white * w.transpose()));
    let objective = scores.iter().sum();
    RestartOutcome {
        rotation: w,
        report: ConvergenceReport {
            converged,
            iterations,
            component_iterations,
            final_deltas: deltas,
            restart,
            objective,
        },
        scores,
    }
}

/// Symmetric FastICA with `d₀` components.
///
/// Non-convergence is reported in [`ConvergenceReport`], not raised.
pub fn fast_ica(x: &DMatrix<f64>, d0: usize, config: &IcaConfig) -> Result<IcaResult> {
    if d0 > x.ncols() {
        return Err(Error::mismatch("fast_ica components", format!("<= {}", x.ncols()), d0));
    }
    if config.restarts == 0 || config.max_iter == 0 {
        return Err(Error::InvalidInput("restarts and max_iter must be positive".into()));
    }
    let (whitening, white) = whiten(x, d0)?;
    let outcomes: Vec<RestartOutcome> = if config.parallel {
        (0..config.restarts)
            .into_par_iter()
            .map(|r| run_restart(&white, config, r))
            .collect()
    } else {
        (0..config.restarts).map(|r| run_restart(&white, config, r)).collect()
    };
    // best objective; earlier restart wins ties
    let best = outcomes
        .into_iter()
        .reduce(|a, b| {
            if b.report.objective > a.report.objective {
                b
            } else {
                a
            }
        })
        .expect("at least one restart");

    let mut order: Vec<usize> = (0..d0).collect();
    order.sort_by(|&a, &b| best.scores[b].total_cmp(&best.scores[a]).then(a.cmp(&b)));
    let raw = &best.rotation * &whitening.matrix;
    let mut unmixing = DMatrix::zeros(d0, x.ncols());
    for (dst, &src) in order.iter().enumerate() {
        let mut row: Vec<f64> = raw.row(src).iter().copied().collect();
        linalg::canonical_sign(&mut row);
        for (j, v) in row.into_iter().enumerate() {
            unmixing[(dst, j)] = v;
        }
    }
    let sources = linalg::center_columns(x, &DVector::from_vec(whitening.mean.clone())) * unmixing.transpose();
    let non_gaussianity = order.iter().map(|&i| best.scores[i]).collect();
    let mut convergence = best.report;
    convergence.component_iterations = order.iter().map(|&i| convergence.component_iterations[i]).collect();
    convergence.final_deltas = order.iter().map(|&i| convergence.final_deltas[i]).collect();
    Ok(IcaResult {
        unmixing,
        sources,
        whitening,
        non_gaussianity,
        convergence,
    })
}

/// Amari index of `P = M G`, normalised to `[0, 1]`; zero iff `P` is a scaled
/// permutation.
pub fn amari_distance(unmixing: &DMatrix<f64>, mixing: &DMatrix<f64>) -> Result<f64> {
    if unmixing.ncols() != mixing.nrows() || unmixing.nrows() != mixing.ncols() {
        return Err(Error::mismatch(
            "amari_distance",
            format!("{}x{} against {}x{}", unmixing.nrows(), unmixing.ncols(), unmixing.ncols(), unmixing.nrows()),
            format!("{}x{}", mixing.nrows(), mixing.ncols()),
        ));
    }
    Ok(amari_index(&(unmixing * mixing)))
}

pub fn amari_index(p: &DMatrix<f64>) -> f64 {
    let d = p.nrows();
    if d < 2 {
        return 0.0;
    }
    let a = p.map(f64::abs);
    let mut total = 0.0;
    for row in a.row_iter() {
        let m = row.max();
        total += row.sum() / m - 1.0;
    }
    for col in a.column_iter() {
        let m = col.max();
        total += col.sum() / m - 1.0;
    }
    total / (2.0 * d as f64 * (d as f64 - 1.0))
}

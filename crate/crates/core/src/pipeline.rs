//! End-to-end driver: per-domain ICA, HCA search, weight recovery and
//! factor alignment, plus the report envelope shared by all commands.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{self, AlignmentReport};
use crate::data::DomainCollection;
use crate::error::{Error, Result};
use crate::hca::{self, HcaConfig, HcaSolution, RecoveredScm};
use crate::ica::{self, IcaConfig};
use crate::linalg;
use crate::matrix_json;
use crate::seed;

/// Components whose non-Gaussianity falls below this are reported as
/// nearly Gaussian in strict mode.
pub const WEAK_NON_GAUSSIANITY: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainSelection {
    /// Explicit domain ids, in the order used for the search.
    pub ids: Option<Vec<String>>,
    /// Otherwise keep every domain with at least this many rows.
    pub min_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub enabled: bool,
    /// One regression per domain instead of pooling all selected domains.
    pub per_domain: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            enabled: true,
            per_domain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub d0: usize,
    pub domains: DomainSelection,
    /// `seed` here is ignored; per-domain ICA seeds derive from the master.
    pub ica: IcaConfig,
    /// `seed` here is ignored; the search seed derives from the master.
    pub hca: HcaConfig,
    pub align: AlignConfig,
    pub seed: u64,
    /// Check modelling assumptions and record violations as warnings.
    pub strict: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            d0: 3,
            domains: DomainSelection::default(),
            ica: IcaConfig::default(),
            hca: HcaConfig::default(),
            align: AlignConfig::default(),
            seed: 0,
            strict: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d0 == 0 {
            return Err(Error::InvalidInput("d0 must be positive".into()));
        }
        if self.d0 > hca::MAX_SEARCH_DIM {
            return Err(Error::InvalidInput(format!("d0 = {} exceeds {}", self.d0, hca::MAX_SEARCH_DIM)));
        }
        if self.ica.restarts == 0 || self.ica.max_iter == 0 || !(self.ica.tol > 0.0) {
            return Err(Error::InvalidInput("ICA restarts, max_iter and tol must be positive".into()));
        }
        if self.hca.budget == 0 {
            return Err(Error::InvalidInput("HCA budget must be positive".into()));
        }
        if let Some(ids) = &self.domains.ids {
            if ids.is_empty() {
                return Err(Error::InvalidInput("empty domain id list".into()));
            }
        }
        Ok(())
    }

    pub fn ica_seed(&self, k: usize) -> u64 {
        seed::derive(self.seed, &[1, k as u64])
    }

    pub fn hca_seed(&self) -> u64 {
        seed::derive(self.seed, &[2])
    }
}

pub fn select_domains(collection: &DomainCollection, selection: &DomainSelection) -> Result<DomainCollection> {
    let ids: Vec<String> = match (&selection.ids, selection.min_size) {
        (Some(ids), _) => ids.clone(),
        (None, min) => collection
            .domains()
            .iter()
            .filter(|d| d.len() >= min.unwrap_or(0))
            .map(|d| d.domain_id.clone())
            .collect(),
    };
    if ids.is_empty() {
        return Err(Error::InvalidInput("no domain passes the selection".into()));
    }
    collection.select(&ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaSummary {
    pub domain: String,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub non_gaussianity: Vec<f64>,
    #[serde(with = "matrix_json")]
    pub unmixing: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub domains: Vec<String>,
    pub benchmarks: Vec<String>,
    pub ica: Vec<IcaSummary>,
    pub solution: HcaSolution,
    pub recovered: RecoveredScm,
    pub alignment: Option<AlignmentReport>,
    pub per_domain_alignment: Option<Vec<AlignmentReport>>,
    /// When true latents are bundled: per-factor multiple correlation of
    /// true `z_i` with the recovered factors `0..=i`.
    pub latent_recovery: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl PipelineResult {
    /// Unmixing after alignment when available, else the raw `Ĥ`.
    pub fn final_unmixing(&self) -> &DMatrix<f64> {
        self.alignment
            .as_ref()
            .and_then(|a| a.adjusted_unmixing.as_ref())
            .unwrap_or(&self.solution.h_hat)
    }

    pub fn summary(&self) -> String {
        let s = &self.solution;
        let mut out = String::new();
        out.push_str(&format!("domains: {}\n", self.domains.join(", ")));
        out.push_str(&format!("benchmarks: {}\n", self.benchmarks.join(", ")));
        out.push_str(&format!("mic: {:.6e}\n", s.mic));
        for (d, a) in self.domains.iter().zip(&s.per_domain_alpha) {
            out.push_str(&format!("  alpha[{d}]: {a:.6e}\n"));
        }
        out.push_str(&format!(
            "tuples evaluated: {}{}\n",
            s.tuples_evaluated,
            if s.exhaustive { " (exhaustive)" } else { " (sampled)" }
        ));
        for (i, e) in s.rank1_errors.iter().enumerate() {
            out.push_str(&format!("  rank-1 error z{}: {e:.3e}\n", i + 1));
        }
        if let Some(a) = &self.alignment {
            for (i, f) in a.factors.iter().enumerate() {
                out.push_str(&format!("  z{} ~ {} (R2 = {:.4})\n", i + 1, f.benchmark, f.r_squared));
            }
        }
        if let Some(r) = &self.latent_recovery {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.4}")).collect();
            out.push_str(&format!("latent recovery: {}\n", cells.join(", ")));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// Multiple correlation of each true factor `z_i` with recovered factors
/// `0..=i` (intercept included).
pub fn latent_recovery(truth: &DMatrix<f64>, recovered: &DMatrix<f64>) -> Result<Vec<f64>> {
    if truth.shape() != recovered.shape() {
        return Err(Error::mismatch(
            "latent_recovery",
            format!("{:?}", truth.shape()),
            format!("{:?}", recovered.shape()),
        ));
    }
    (0..truth.ncols())
        .map(|i| {
            let y: Vec<f64> = truth.column(i).iter().copied().collect();
            let fit = alignment::ols_fit(&y, &recovered.columns(0, i + 1).into_owned(), true)?;
            Ok(fit.r_squared.max(0.0).sqrt())
        })
        .collect()
}

pub fn run_pipeline(collection: &DomainCollection, config: &PipelineConfig) -> Result<PipelineResult> {
    config.validate()?;
    let selected = select_domains(collection, &config.domains)?;
    let d0 = config.d0;
    let n = selected.benchmarks().len();
    if d0 > n {
        return Err(Error::InvalidInput(format!("d0 = {d0} exceeds the {n} benchmarks")));
    }
    let mut warnings = Vec::new();
    if config.strict && selected.len() < d0 {
        warnings.push(format!(
            "only {} domains for d0 = {d0}: identifiability needs at least d0 domains",
            selected.len()
        ));
    }

    let icas = selected
        .domains()
        .par_iter()
        .enumerate()
        .map(|(k, d)| {
            let cfg = IcaConfig {
                seed: config.ica_seed(k),
                ..config.ica.clone()
            };
            ica::fast_ica(&d.observations, d0, &cfg).map(|r| (cfg.seed, r))
        })
        .collect::<Result<Vec<_>>>()?;
    if config.strict {
        for ((_, r), d) in icas.iter().zip(selected.domains()) {
            if !r.convergence.converged {
                warnings.push(format!("ICA did not converge on {}", d.domain_id));
            }
            if let Some(i) = r.non_gaussianity.iter().position(|&g| g < WEAK_NON_GAUSSIANITY) {
                warnings.push(format!("{}: component {} is nearly Gaussian", d.domain_id, i + 1));
            }
        }
    }
    let m_mats: Vec<DMatrix<f64>> = icas.iter().map(|(_, r)| r.unmixing.clone()).collect();
    let hca_cfg = HcaConfig {
        seed: config.hca_seed(),
        ..config.hca.clone()
    };
    let solution = hca::hca_search(&m_mats, &hca_cfg)?;
    let recovered = hca::recover_graph_weights(&solution.b_hats)?;

    let benchmarks = selected.benchmarks().to_vec();
    let stacked = selected.stacked();
    let (alignment, per_domain_alignment) = if config.align.enabled {
        let z = solution.factors(&stacked);
        let (_, pooled) = alignment::align_factors(&z, &stacked, &benchmarks, Some(&solution.h_hat))?;
        let per_domain = if config.align.per_domain {
            let parts: Vec<_> = selected
                .domains()
                .iter()
                .map(|d| (solution.factors(&d.observations), d.observations.clone()))
                .collect();
            Some(alignment::align_factors_per_domain(&parts, &benchmarks, Some(&solution.h_hat))?)
        } else {
            None
        };
        (Some(pooled), per_domain)
    } else {
        (None, None)
    };

    let latent = if selected.domains().iter().all(|d| d.latents.as_ref().is_some_and(|z| z.ncols() == d0)) {
        let total = stacked.nrows();
        let mut truth = DMatrix::zeros(total, d0);
        let mut r = 0;
        for d in selected.domains() {
            let z = d.latents.as_ref().expect("checked");
            truth.rows_mut(r, z.nrows()).copy_from(z);
            r += z.nrows();
        }
        Some(latent_recovery(&truth, &solution.factors(&stacked))?)
    } else {
        None
    };

    let ica = icas
        .into_iter()
        .zip(selected.domains())
        .map(|((seed, r), d)| IcaSummary {
            domain: d.domain_id.clone(),
            seed,
            converged: r.convergence.converged,
            iterations: r.convergence.iterations,
            non_gaussianity: r.non_gaussianity,
            unmixing: r.unmixing,
        })
        .collect();
    Ok(PipelineResult {
        domains: selected.domains().iter().map(|d| d.domain_id.clone()).collect(),
        benchmarks,
        ica,
        solution,
        recovered,
        alignment,
        per_domain_alignment,
        latent_recovery: latent,
        warnings,
    })
}

/// Common wrapper for every emitted report. `wall_clock_seconds` is the only
/// field allowed to differ between runs with equal inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub tool: String,
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub result: T,
    pub wall_clock_seconds: f64,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, result: T, wall_clock_seconds: f64) -> Result<Self> {
        Ok(Report {
            tool: "hca".into(),
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config)?,
            result,
            wall_clock_seconds,
        })
    }

    /// JSON with the wall-clock field removed.
    pub fn payload(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("wall_clock_seconds");
        }
        Ok(serde_json::to_string(&v)?)
    }
}

/// Relative forbidden-side mass of `Ĥ G` (see [`hca::triangularity_violation`]).
pub fn forbidden_side(h_hat: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    hca::triangularity_violation(&(h_hat * g))
}

/// Convenience for callers holding per-domain unmixing matrices as rows.
pub fn matrices_from_rows(rows: &[Vec<Vec<f64>>]) -> Result<Vec<DMatrix<f64>>> {
    rows.iter()
        .map(|m| matrix_json::from_rows(m).map_err(Error::InvalidInput))
        .collect()
}

/// Pearson correlation of column `i` of `a` with column `j` of `b`.
pub fn column_correlation(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let x: Vec<f64> = a.column(i).iter().copied().collect();
    let y: Vec<f64> = b.column(j).iter().copied().collect();
    linalg::pearson(&x, &y)
}

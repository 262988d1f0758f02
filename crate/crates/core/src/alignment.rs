//! Post-HCA ambiguity adjustment.
//!
//! HCA recovers factor `i` only up to a mixture of factors `0..=i`. For each
//! factor in order we regress it on its (already adjusted) predecessors plus
//! one benchmark column, keep the benchmark with the highest R², and subtract
//! the fitted predecessor part. The same row operations are applied to `Ĥ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// Slopes, one per design column.
    pub coefficients: Vec<f64>,
    /// Zero when fitted without intercept.
    pub intercept: f64,
    pub r_squared: f64,
    /// Design was rank deficient; the minimum-norm solution was returned.
    pub rank_deficient: bool,
    /// Target has zero variance; R² is reported as 0.
    pub degenerate_target: bool,
}

impl OlsFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.coefficients).map(|(x, c)| x * c).sum::<f64>()
    }
}

/// R² = 1 − RSS/TSS with TSS taken around the mean of `y`.
fn r_squared(y: &[f64], fitted: &[f64]) -> (f64, bool) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let rss: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if tss <= 1e-24 * scale {
        return (0.0, true);
    }
    (1.0 - rss / tss, false)
}

pub fn ols_fit(y: &[f64], x: &DMatrix<f64>, intercept: bool) -> Result<OlsFit> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::mismatch("ols_fit rows", n, x.nrows()));
    }
    let p = x.ncols() + usize::from(intercept);
    if n <= p {
        return Err(Error::InsufficientData(format!("OLS with {p} parameters needs more than {p} rows, got {n}")));
    }
    let mut design = DMatrix::zeros(n, p);
    design.columns_mut(0, x.ncols()).copy_from(x);
    if intercept {
        design.column_mut(p - 1).fill(1.0);
    }
    let target = DMatrix::from_column_slice(n, 1, y);
    let (beta, rank) = linalg::lstsq(&design, &target);
    let fitted = &design * &beta;
    let (r2, degenerate) = r_squared(y, fitted.as_slice());
    Ok(OlsFit {
        coefficients: beta.iter().take(x.ncols()).copied().collect(),
        intercept: if intercept { beta[p - 1] } else { 0.0 },
        r_squared: r2,
        rank_deficient: rank < p,
        degenerate_target: degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorAlignment {
    pub benchmark_index: usize,
    pub benchmark: String,
    /// `a_j` for the adjusted predecessors `j < i`.
    pub predecessor_coefficients: Vec<f64>,
    pub gamma: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub benchmarks: Vec<String>,
    pub factors: Vec<FactorAlignment>,
    /// `d₀ × n`: R² of the regression of factor `i` on its predecessors and benchmark `j`.
    #[serde(with = "matrix_json")]
    pub r_squared: DMatrix<f64>,
    #[serde(with = "matrix_json::option")]
    pub adjusted_unmixing: Option<DMatrix<f64>>,
}

impl AlignmentReport {
    /// R² table with factors as rows and benchmarks as columns.
    pub fn r2_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["factor".to_string()];
        header.extend(self.benchmarks.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.r_squared.nrows() {
            let mut rec = vec![format!("z{}", i + 1)];
            rec.extend(self.r_squared.row(i).iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn design_with(z: &DMatrix<f64>, upto: usize, extra: &[f64]) -> DMatrix<f64> {
    let n = z.nrows();
    let mut d = DMatrix::zeros(n, upto + 1);
    d.columns_mut(0, upto).copy_from(&z.columns(0, upto));
    d.column_mut(upto).copy_from_slice(extra);
    d
}

/// Adjusts pooled factors `z` (`N × d₀`) against benchmarks `x` (`N × n`).
///
/// Returns the adjusted factors and the report. When `h_hat` is given, the
/// report carries `Ĥ` with the same row operations applied.
pub fn align_factors(
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    benchmarks: &[String],
    h_hat: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, AlignmentReport)> {
    let (rows, d) = z.shape();
    if x.nrows() != rows {
        return Err(Error::mismatch("align_factors rows", rows, x.nrows()));
    }
    if benchmarks.len() != x.ncols() {
        return Err(Error::mismatch("align_factors benchmarks", x.ncols(), benchmarks.len()));
    }
    if let Some(h) = h_hat {
        if h.nrows() != d {
            return Err(Error::mismatch("align_factors unmixing rows", d, h.nrows()));
        }
    }
    let mut adjusted = z.clone();
    let mut h_adj = h_hat.cloned();
    let mut r2 = DMatrix::zeros(d, x.ncols());
    let mut factors = Vec::with_capacity(d);
    for i in 0..d {
        let target: Vec<f64> = adjusted.column(i).iter().copied().collect();
        let mut best: Option<(usize, OlsFit)> = None;
        for b in 0..x.ncols() {
            let col: Vec<f64> = x.column(b).iter().copied().collect();
            let fit = ols_fit(&target, &design_with(&adjusted, i, &col), true)?;
            r2[(i, b)] = fit.r_squared;
            // strict comparison keeps the earliest column on ties
            if best.as_ref().is_none_or(|(_, f)| fit.r_squared > f.r_squared) {
                best = Some((b, fit));
            }
        }
        let (b, fit) = best.expect("at least one benchmark");
        let a = fit.coefficients[..i].to_vec();
        for (j, &aj) in a.iter().enumerate() {
            let pred = adjusted.column(j).into_owned();
            let mut col = adjusted.column_mut(i);
            col -= pred * aj;
            if let Some(h) = h_adj.as_mut() {
                let hj = h.row(j).into_owned();
                let mut hi = h.row_mut(i);
                hi -= hj * aj;
            }
        }
        factors.push(FactorAlignment {
            benchmark_index: b,
            benchmark: benchmarks[b].clone(),
            predecessor_coefficients: a,
            gamma: fit.coefficients[i],
            intercept: fit.intercept,
            r_squared: fit.r_squared,
        });
    }
    Ok((
        adjusted,
        AlignmentReport {
            benchmarks: benchmarks.to_vec(),
            factors,
            r_squared: r2,
            adjusted_unmixing: h_adj,
        },
    ))
}

/// Per-domain variant: one independent alignment per `(z, x)` pair.
pub fn align_factors_per_domain(
    parts: &[(DMatrix<f64>, DMatrix<f64>)],
    benchmarks: &[String],
    h_hat: Option<&DMatrix<f64>>,
) -> Result<Vec<AlignmentReport>> {
    parts
        .iter()
        .map(|(z, x)| align_factors(z, x, benchmarks, h_hat).map(|(_, r)| r))
        .collect()
}

/// Evaluates the stored regressions on new data, replaying the same
/// sequential adjustment. R² may be negative.
pub fn out_of_sample_r2(report: &AlignmentReport, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (rows, d) = z.shape();
    if d != report.factors.len() {
        return Err(Error::mismatch("out_of_sample_r2 factors", report.factors.len(), d));
    }
    if x.nrows() != rows || x.ncols() != report.benchmarks.len() {
        return Err(Error::mismatch(
            "out_of_sample_r2 benchmarks",
            format!("{rows}x{}", report.benchmarks.len()),
            format!("{:?}", x.shape()),
        ));
    }
    let mut adjusted = z.clone();
    let mut out = Vec::with_capacity(d);
    for (i, f) in report.factors.iter().enumerate() {
        let y: Vec<f64> = z.column(i).iter().copied().collect();
        let fitted: Vec<f64> = (0..rows)
            .map(|r| {
                let pred: f64 = f
                    .predecessor_coefficients
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * adjusted[(r, j)])
                    .sum();
                pred + f.gamma * x[(r, f.benchmark_index)] + f.intercept
            })
            .collect();
        out.push(r_squared(&y, &fitted).0);
        for (j, &aj) in f.predecessor_coefficients.iter().enumerate() {
            let pred = adjusted.column(j).into_owned();
            let mut col = adjusted.column_mut(i);
            col -= pred * aj;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_line() {
        let x = DMatrix::from_column_slice(5, 1, &[0., 1., 2., 3., 4.]);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = ols_fit(&y, &x, true).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_target() {
        let x = DMatrix::from_column_slice(4, 1, &[1., -1., 1., -1.]);
        let y = [1., 1., -1., -1.];
        let f = ols_fit(&y, &x, true).unwrap();
        assert!(f.coefficients[0].abs() < 1e-12);
        assert!(f.r_squared.abs() < 1e-12);
    }

    #[test]
    fn noisy_two_regressors() {
        let mut rng = seed::rng(21, &[]);
        let x = DMatrix::from_fn(1000, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..1000)
            .map(|r| 3.0 * x[(r, 0)] - x[(r, 1)] + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let f = ols_fit(&y, &x, true).unwrap();
        assert!((f.coefficients[0] - 3.0).abs() < 0.05);
        assert!((f.coefficients[1] + 1.0).abs() < 0.05);
        assert!(f.r_squared > 0.95);
    }

    #[test]
    fn constant_target_is_degenerate() {
        let x = DMatrix::from_column_slice(4, 1, &[1., 2., 3., 4.]);
        let f = ols_fit(&[5.0; 4], &x, true).unwrap();
        assert!(f.degenerate_target);
        assert_eq!(f.r_squared, 0.0);
    }

    #[test]
    fn collinear_design_flags_rank() {
        let x = DMatrix::from_row_slice(4, 2, &[1., 2., 2., 4., 3., 6., 4., 8.]);
        let f = ols_fit(&[1., 2., 3., 4.], &x, false).unwrap();
        assert!(f.rank_deficient);
        assert!((f.r_squared - 1.0).abs() < 1e-10);
    }

    #[test]
    fn too_few_rows() {
        assert!(ols_fit(&[1.0, 2.0], &DMatrix::zeros(2, 2), true).is_err());
    }

    fn synthetic() -> (DMatrix<f64>, DMatrix<f64>, Vec<String>) {
        let mut rng = seed::rng(31, &[]);
        let n = 400;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut z = DMatrix::zeros(n, 2);
        for r in 0..n {
            z[(r, 0)] = x[(r, 1)] + 0.3 * x[(r, 0)];
            z[(r, 1)] = 2.0 * z[(r, 0)] + x[(r, 3)];
        }
        (z, x, vec!["a".into(), "b".into(), "c".into(), "d".into()])
    }

    #[test]
    fn single_factor_unchanged() {
        let (z, x, names) = synthetic();
        let z1 = z.columns(0, 1).into_owned();
        let (adj, rep) = align_factors(&z1, &x, &names, None).unwrap();
        assert_eq!(adj, z1);
        assert_eq!(rep.factors[0].benchmark, "b");
    }

    #[test]
    fn removes_predecessor_component() {
        let (z, x, names) = synthetic();
        let (adj, rep) = align_factors(&z, &x, &names, None).unwrap();
        assert_eq!(rep.factors[1].benchmark, "d");
        assert!((rep.factors[1].predecessor_coefficients[0] - 2.0).abs() < 1e-10);
        let a: Vec<f64> = adj.column(1).iter().copied().collect();
        let b: Vec<f64> = x.column(3).iter().copied().collect();
        assert!((linalg::pearson(&a, &b) - 1.0).abs() < 1e-10);
        let best = rep.r_squared.row(1).max();
        assert_eq!(rep.r_squared[(1, 3)], best);
    }

    #[test]
    fn idempotent() {
        let (z, x, names) = synthetic();
        let (adj, _) = align_factors(&z, &x, &names, None).unwrap();
        let (adj2, rep2) = align_factors(&adj, &x, &names, None).unwrap();
        assert!(rep2.factors[1].predecessor_coefficients[0].abs() < 1e-8);
        assert!((adj2 - adj).norm() < 1e-8);
    }

    #[test]
    fn out_of_sample_on_training_data() {
        let (z, x, names) = synthetic();
        let (_, rep) = align_factors(&z, &x, &names, None).unwrap();
        let r2 = out_of_sample_r2(&rep, &z, &x).unwrap();
        for (i, f) in rep.factors.iter().enumerate() {
            assert!((r2[i] - f.r_squared).abs() < 1e-10);
        }
    }

    #[test]
    fn out_of_sample_uncorrelated_target() {
        let (z, x, names) = synthetic();
        let (_, rep) = align_factors(&z, &x, &names, None).unwrap();
        let mut rng = seed::rng(77, &[]);
        let noise = DMatrix::from_fn(z.nrows(), 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r2 = out_of_sample_r2(&rep, &noise, &x).unwrap();
        assert!(r2.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn r2_csv_layout() {
        let (z, x, names) = synthetic();
        let (_, rep) = align_factors(&z, &x, &names, None).unwrap();
        let csv = rep.r2_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "factor,a,b,c,d");
        assert!(lines.next().unwrap().starts_with("z1,"));
    }
}

//! PCA subspaces per domain and distances between them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DomainCollection;
use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    #[default]
    Raw,
    /// Columns divided by their sample standard deviation before PCA.
    Zscore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalSubspace {
    /// `n × r`, orthonormal columns.
    #[serde(with = "matrix_json")]
    pub basis: DMatrix<f64>,
    /// Length `min(n, N)`, descending, sums to 1.
    pub explained_variance_ratios: Vec<f64>,
    pub mean: Vec<f64>,
    /// Per-column divisor applied before projection (all ones for raw).
    pub scale: Vec<f64>,
}

impl PrincipalSubspace {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    fn standardize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = linalg::center_columns(x, &DVector::from_vec(self.mean.clone()));
        for (j, s) in self.scale.iter().enumerate() {
            c.column_mut(j).unscale_mut(*s);
        }
        c
    }
}

pub fn pca(x: &DMatrix<f64>, r: usize, scaling: Scaling) -> Result<PrincipalSubspace> {
    let (rows, n) = x.shape();
    if rows < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 rows, got {rows}")));
    }
    if r == 0 || r > n.min(rows) {
        return Err(Error::InvalidInput(format!("rank {r} outside 1..={}", n.min(rows))));
    }
    let mean = linalg::column_means(x);
    let mut cov = linalg::covariance(x);
    let scale: Vec<f64> = match scaling {
        Scaling::Raw => vec![1.0; n],
        Scaling::Zscore => (0..n)
            .map(|j| {
                let sd = cov[(j, j)].sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect(),
    };
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] /= scale[i] * scale[j];
        }
    }
    let (vals, vecs) = linalg::sym_eigen(&cov);
    let kept = n.min(rows);
    let clipped: Vec<f64> = vals.iter().take(kept).map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let ratios = if total > 0.0 {
        clipped.iter().map(|v| v / total).collect()
    } else {
        vec![0.0; kept]
    };
    let mut basis = DMatrix::zeros(n, r);
    for c in 0..r {
        let mut v: Vec<f64> = vecs.column(c).iter().copied().collect();
        linalg::canonical_sign(&mut v);
        basis.column_mut(c).copy_from_slice(&v);
    }
    Ok(PrincipalSubspace {
        basis,
        explained_variance_ratios: ratios,
        mean: mean.iter().copied().collect(),
        scale,
    })
}

/// Cosines of the principal angles, descending.
pub fn principal_angle_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch("principal angles", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    // bases need not be orthonormal
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let s = linalg::singular_values(&(qa.transpose() * qb));
    Ok(s.iter().map(|v| v.min(1.0)).collect())
}

/// Principal angles in radians, ascending.
pub fn principal_angles(a: &PrincipalSubspace, b: &PrincipalSubspace) -> Result<Vec<f64>> {
    Ok(principal_angle_cosines(&a.basis, &b.basis)?.into_iter().map(f64::acos).collect())
}

/// `1 − mean cosine of the principal angles`.
pub fn subspace_distance(a: &PrincipalSubspace, b: &PrincipalSubspace) -> Result<f64> {
    basis_distance(&a.basis, &b.basis)
}

pub fn basis_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::mismatch("subspace rank", a.ncols(), b.ncols()));
    }
    let c = principal_angle_cosines(a, b)?;
    Ok((1.0 - c.iter().sum::<f64>() / c.len() as f64).clamp(0.0, 1.0))
}

/// Residual norm of each centered row after projection onto `s`.
pub fn point_subspace_distances(x: &DMatrix<f64>, s: &PrincipalSubspace) -> Result<Vec<f64>> {
    if x.ncols() != s.basis.nrows() {
        return Err(Error::mismatch("point distances columns", s.basis.nrows(), x.ncols()));
    }
    let c = s.standardize(x);
    let proj = &c * &s.basis * s.basis.transpose();
    Ok((c - proj).row_iter().map(|r| r.norm()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    #[serde(with = "matrix_json")]
    pub matrix: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (i, l) in self.labels.iter().enumerate() {
            let mut rec = vec![l.clone()];
            rec.extend(self.matrix.row(i).iter().map(|v| format!("{v:.10}")));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// `{labels, matrix}` with the matrix as nested rows.
    pub fn heatmap_json(&self) -> serde_json::Value {
        serde_json::json!({
            "labels": self.labels,
            "matrix": matrix_json::to_rows(&self.matrix),
        })
    }
}

pub fn pairwise_distance_matrix(domains: &DomainCollection, r: usize, scaling: Scaling) -> Result<DistanceMatrix> {
    let subspaces = domains
        .domains()
        .par_iter()
        .map(|d| pca(&d.observations, r, scaling))
        .collect::<Result<Vec<_>>>()?;
    let k = subspaces.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let dists = pairs
        .par_iter()
        .map(|&(i, j)| subspace_distance(&subspaces[i], &subspaces[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut m = DMatrix::zeros(k, k);
    for (&(i, j), d) in pairs.iter().zip(dists) {
        m[(i, j)] = d;
        m[(j, i)] = d;
    }
    Ok(DistanceMatrix {
        labels: domains.domains().iter().map(|d| d.domain_id.clone()).collect(),
        matrix: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainDataset;
    use crate::seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, s: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(s, &[]);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn line(dir: &[f64]) -> PrincipalSubspace {
        let v = DVector::from_column_slice(dir).normalize();
        PrincipalSubspace {
            basis: DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
            explained_variance_ratios: vec![1.0],
            mean: vec![0.0; v.len()],
            scale: vec![1.0; v.len()],
        }
    }

    #[test]
    fn line_data_has_one_component() {
        let t = gaussian(200, 1, 1);
        let x = DMatrix::from_fn(200, 3, |r, c| 5.0 + t[r] * [1.0, 2.0, -1.0][c]);
        let s = pca(&x, 1, Scaling::Raw).unwrap();
        assert!((s.explained_variance_ratios[0] - 1.0).abs() < 1e-12);
        assert!((s.mean[0] - 5.0).abs() < 1.0);
    }

    #[test]
    fn isotropic_ratios_near_uniform() {
        let s = pca(&gaussian(20_000, 4, 2), 4, Scaling::Raw).unwrap();
        for r in &s.explained_variance_ratios {
            assert!((r - 0.25).abs() < 0.02, "{r}");
        }
        let gram = s.basis.transpose() * &s.basis;
        assert!((gram - DMatrix::identity(4, 4)).norm() < 1e-10);
    }

    #[test]
    fn low_rank_tail_vanishes() {
        let z = gaussian(500, 3, 3);
        let g = gaussian(6, 3, 4);
        let s = pca(&(z * g.transpose()), 3, Scaling::Raw).unwrap();
        assert_eq!(s.explained_variance_ratios.len(), 6);
        assert!(s.explained_variance_ratios[3..].iter().all(|&v| v < 1e-10));
    }

    #[test]
    fn ratios_length_capped_by_rows() {
        let s = pca(&gaussian(3, 5, 5), 2, Scaling::Raw).unwrap();
        assert_eq!(s.explained_variance_ratios.len(), 3);
    }

    #[test]
    fn rank_out_of_range() {
        assert!(pca(&gaussian(10, 3, 6), 4, Scaling::Raw).is_err());
        assert!(pca(&gaussian(1, 3, 6), 1, Scaling::Raw).is_err());
    }

    #[test]
    fn distances_between_lines() {
        let a = line(&[1.0, 0.0]);
        assert_eq!(subspace_distance(&a, &a).unwrap(), 0.0);
        assert!((subspace_distance(&a, &line(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        let sixty = line(&[0.5, 3f64.sqrt() / 2.0]);
        assert!((subspace_distance(&a, &sixty).unwrap() - 0.5).abs() < 1e-12);
        let angle = principal_angles(&a, &sixty).unwrap()[0];
        assert!((angle - std::f64::consts::FRAC_PI_3).abs() < 1e-12);
    }

    #[test]
    fn rank_mismatch_rejected() {
        let a = pca(&gaussian(50, 3, 7), 1, Scaling::Raw).unwrap();
        let b = pca(&gaussian(50, 3, 8), 2, Scaling::Raw).unwrap();
        assert!(subspace_distance(&a, &b).is_err());
    }

    #[test]
    fn point_distances() {
        let s = line(&[1.0, 0.0, 0.0]);
        let x = DMatrix::from_row_slice(2, 3, &[4.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let d = point_subspace_distances(&x, &s).unwrap();
        assert!(d[0].abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-15);
        let x = gaussian(30, 3, 9);
        let full = pca(&x, 3, Scaling::Raw).unwrap();
        assert!(point_subspace_distances(&x, &full).unwrap().iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn zscore_invariant_to_column_scale() {
        let x = gaussian(300, 3, 10) * DMatrix::from_row_slice(3, 3, &[1., 0.5, 0., 0., 1., 0.3, 0., 0., 1.]);
        let mut y = x.clone();
        y.column_mut(1).scale_mut(100.0);
        let a = pca(&x, 2, Scaling::Zscore).unwrap();
        let b = pca(&y, 2, Scaling::Zscore).unwrap();
        assert!(subspace_distance(&a, &b).unwrap() < 1e-10);
    }

    #[test]
    fn duplicated_domain_has_zero_distance() {
        let x = gaussian(100, 4, 11);
        let c = DomainCollection::new(
            (1..=4).map(|i| format!("b{i}")).collect(),
            vec![
                DomainDataset::new("a", x.clone()).unwrap(),
                DomainDataset::new("b", x).unwrap(),
                DomainDataset::new("c", gaussian(100, 4, 12)).unwrap(),
            ],
        )
        .unwrap();
        let m = pairwise_distance_matrix(&c, 2, Scaling::Raw).unwrap();
        assert!(m.matrix[(0, 1)].abs() < 1e-12);
        assert!(m.matrix[(0, 2)] > 0.0);
        assert_eq!(m.matrix, m.matrix.transpose());
        assert_eq!(m.heatmap_json()["labels"][2], "c");
        assert!(m.to_csv().unwrap().starts_with(",a,b,c\n"));
    }
}

//! Small dense linear-algebra helpers on nalgebra types.
//!
//! Spectral decompositions run on faer: nalgebra's SVD can return a wrong
//! factorisation for exactly rank-deficient wide inputs, which HCA produces
//! by construction. All spectra come back sorted in descending order.

use faer::{Mat, MatRef, Side};
use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-10;

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD with singular values sorted descending.
///
/// Returns `(u, s, vt)` with `u: m×p`, `s: p`, `vt: p×n`, `p = min(m, n)`.
/// Non-finite input yields NaN factors.
pub fn svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    let p = r.min(c);
    if p == 0 {
        return (DMatrix::zeros(r, 0), DVector::zeros(0), DMatrix::zeros(0, c));
    }
    match to_faer(m).thin_svd() {
        Ok(f) => {
            // faer already sorts descending
            let s = f.S();
            (
                from_faer(f.U()),
                DVector::from_fn(p, |i, _| s[i]),
                from_faer(f.V()).transpose(),
            )
        }
        Err(_) => (
            DMatrix::from_element(r, p, f64::NAN),
            DVector::from_element(p, f64::NAN),
            DMatrix::from_element(p, c, f64::NAN),
        ),
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows().min(m.ncols());
    if p == 0 {
        return DVector::zeros(0);
    }
    match to_faer(m).singular_values() {
        Ok(mut s) => {
            s.sort_by(|a, b| b.total_cmp(a));
            DVector::from_vec(s)
        }
        Err(_) => DVector::from_element(p, f64::NAN),
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
/// Eigenvectors are the columns of the returned matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let Ok(eig) = to_faer(&sym).self_adjoint_eigen(Side::Lower) else {
        return (DVector::from_element(n, f64::NAN), DMatrix::from_element(n, n, f64::NAN));
    };
    let (vals, vecs) = (eig.S(), eig.U());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        values[dst] = vals[src];
        for i in 0..n {
            vectors[(i, dst)] = vecs[(i, src)];
        }
    }
    (values, vectors)
}

/// Numerical rank under the relative cutoff `RANK_TOL`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    if s.is_empty() || s[0] == 0.0 {
        return 0;
    }
    let cutoff = s[0] * RANK_TOL;
    s.iter().filter(|&&v| v > cutoff).count()
}

/// Orthonormal basis (as rows) for the span of the rows of `rows`.
/// Rank-revealing: directions with singular value below `RANK_TOL * σ_max`
/// are dropped.
pub fn row_space_basis(rows: &DMatrix<f64>) -> DMatrix<f64> {
    if rows.nrows() == 0 {
        return DMatrix::zeros(0, rows.ncols());
    }
    let (_, s, vt) = svd(rows);
    if s.is_empty() || s[0] == 0.0 {
        return DMatrix::zeros(0, rows.ncols());
    }
    let cutoff = s[0] * RANK_TOL;
    let r = s.iter().filter(|&&v| v > cutoff).count();
    vt.rows(0, r).into_owned()
}

/// Minimum-norm least squares `argmin ‖a x − b‖`, via SVD.
/// Returns the solution and the numerical rank of `a`.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (u, s, vt) = svd(a);
    let p = s.len();
    let cutoff = if p > 0 { s[0] * RANK_TOL } else { 0.0 };
    let r = s.iter().filter(|&&v| v > cutoff && v > 0.0).count();
    let utb = u.transpose() * b;
    let mut scaled = DMatrix::zeros(p, b.ncols());
    for i in 0..r {
        for j in 0..b.ncols() {
            scaled[(i, j)] = utb[(i, j)] / s[i];
        }
    }
    (vt.transpose() * scaled, r)
}

/// Moore–Penrose pseudo-inverse.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    lstsq(a, &DMatrix::identity(a.nrows(), a.nrows())).0
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Sample covariance with the `N − 1` normalisation.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_means(x);
    let xc = center_columns(x, &mean);
    let denom = (x.nrows().saturating_sub(1)).max(1) as f64;
    (xc.transpose() * &xc) / denom
}

/// `(m)^{-1/2}` for a symmetric positive-definite matrix.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let d = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt()));
    &vecs * d * vecs.transpose()
}

pub fn row_norm(m: &DMatrix<f64>, i: usize) -> f64 {
    m.row(i).norm()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

pub fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(d), &mut vec![false; d], &mut out);
    out
}

/// Rows of `m` reordered so that output row `r` is input row `perm[r]`.
pub fn permute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in perm.iter().enumerate() {
        out.set_row(dst, &m.row(src));
    }
    out
}

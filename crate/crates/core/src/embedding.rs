//! Slowness embedding of sparse codes.
//!
//! For a window of codes `A` (M x W) the embedding `P` (f x M) minimizes the
//! second-difference energy `||P A D||_F^2` subject to `P V P^T = I`, where
//! `D` is the W x W tridiagonal second-difference operator and `V` the code
//! covariance. With `S = V^{-1/2}` and `Q = S A D D^T A^T S`, the minimizer is
//! `P = U^T S` for the `f` eigenvectors `U` of `Q` with the smallest
//! eigenvalues, and the minimum equals the sum of those eigenvalues.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{invalid, shape, PsmtError, Result};
use crate::io;
use crate::linalg::symmetric_eigen;
use crate::sparse::SparseCodeMatrix;

/// Tridiagonal second-difference operator: 1 on the diagonal, -0.5 on both
/// off-diagonals. Boundary rows keep their single -0.5 neighbour.
///
/// With `interior_only` the first and last rows are dropped, so `A D` keeps
/// only the W - 2 interior second differences, which vanish on trajectories
/// linear in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DerivativeOperator {
    size: usize,
    interior_only: bool,
}

impl DerivativeOperator {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn interior_only(&self) -> bool {
        self.interior_only
    }

    /// Number of columns of `A D`.
    pub fn output_len(&self) -> usize {
        if self.interior_only {
            self.size - 2
        } else {
            self.size
        }
    }

    /// Dense matrix. W x W, or W x (W - 2) when only interior columns are kept
    /// (D is symmetric, so its rows and columns coincide).
    pub fn matrix(&self) -> DMatrix<f64> {
        let w = self.size;
        let full = DMatrix::from_fn(w, w, |r, c| {
            if r == c {
                1.0
            } else if r.abs_diff(c) == 1 {
                -0.5
            } else {
                0.0
            }
        });
        if self.interior_only {
            full.columns(1, w - 2).into_owned()
        } else {
            full
        }
    }

    /// `A D` via the three-point stencil.
    pub fn apply(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let w = self.size;
        if a.ncols() != w {
            return Err(shape(format!(
                "operator of size {w} applied to {} columns",
                a.ncols()
            )));
        }
        let (first, last) = if self.interior_only { (1, w - 1) } else { (0, w) };
        let mut out = DMatrix::zeros(a.nrows(), last - first);
        for t in first..last {
            let mut col = out.column_mut(t - first);
            col.copy_from(&a.column(t));
            if t > 0 {
                col.axpy(-0.5, &a.column(t - 1), 1.0);
            }
            if t + 1 < w {
                col.axpy(-0.5, &a.column(t + 1), 1.0);
            }
        }
        Ok(out)
    }
}

pub fn build_derivative_operator(w: usize) -> Result<DerivativeOperator> {
    build_derivative_operator_with(w, false)
}

pub fn build_derivative_operator_with(w: usize, interior_only: bool) -> Result<DerivativeOperator> {
    if w < 3 {
        return Err(invalid(format!("derivative operator needs W >= 3, got {w}")));
    }
    Ok(DerivativeOperator {
        size: w,
        interior_only,
    })
}

/// Code covariance with its ridge and inverse square root.
#[derive(Debug, Clone)]
pub struct CovarianceStats {
    /// Includes the ridge on its diagonal.
    pub v: DMatrix<f64>,
    pub ridge: f64,
    pub inv_sqrt: DMatrix<f64>,
    pub centered: bool,
}

/// `V = (1/W) A A^T + ridge * I` (or the mean-centered covariance when
/// `centered`), with `V^{-1/2}` from a symmetric eigendecomposition whose
/// eigenvalues are floored at `ridge`.
pub fn compute_covariance(codes: &SparseCodeMatrix, ridge: f64, centered: bool) -> Result<CovarianceStats> {
    let a = codes.codes();
    if a.ncols() == 0 || a.nrows() == 0 {
        return Err(invalid("covariance of an empty code matrix"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(PsmtError::NonFinite("codes"));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(invalid(format!("ridge must be >= 0, got {ridge}")));
    }
    let v = second_moment(a, centered) + DMatrix::identity(a.nrows(), a.nrows()) * ridge;
    covariance_from_matrix(v, ridge, centered)
}

fn second_moment(a: &DMatrix<f64>, centered: bool) -> DMatrix<f64> {
    let w = a.ncols() as f64;
    if centered {
        let mean = a.column_mean();
        let mut c = a.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        &c * c.transpose() / w
    } else {
        a * a.transpose() / w
    }
}

/// Default ridge: `1e-6 * trace(V) / M` of the unregularized second moment.
pub fn default_ridge(codes: &SparseCodeMatrix, centered: bool) -> f64 {
    let v = second_moment(codes.codes(), centered);
    let m = v.nrows().max(1) as f64;
    let r = 1e-6 * v.trace() / m;
    if r > 0.0 {
        r
    } else {
        1e-12
    }
}

/// Builds the stats for an already-regularized symmetric `v`.
pub fn covariance_from_matrix(v: DMatrix<f64>, ridge: f64, centered: bool) -> Result<CovarianceStats> {
    let eig = symmetric_eigen(&v)?;
    let floor = ridge.max(0.0);
    let mut scaled = eig.vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        let lam = eig.values[j].max(floor);
        if !(lam > 0.0) {
            return Err(invalid(
                "covariance is singular; use a positive ridge",
            ));
        }
        col /= lam.sqrt();
    }
    let inv_sqrt = &scaled * eig.vectors.transpose();
    let inv_sqrt = (&inv_sqrt + inv_sqrt.transpose()) * 0.5;
    Ok(CovarianceStats {
        v,
        ridge,
        inv_sqrt,
        centered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    /// Embedding dimension; `None` means `ceil(M / 16)`.
    pub f: Option<usize>,
    /// Covariance ridge; `None` means `1e-6 * trace(V) / M`.
    pub ridge: Option<f64>,
    /// Mean-center the codes before forming the covariance.
    pub centered: bool,
    /// Drop the boundary rows of the derivative operator.
    pub interior_only: bool,
    /// Covariance directions at or below `range_factor * ridge` are excluded;
    /// 0 keeps all of them.
    pub range_factor: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            f: None,
            ridge: None,
            centered: false,
            interior_only: false,
            range_factor: DEFAULT_RANGE_FACTOR,
        }
    }
}

impl EmbeddingConfig {
    pub fn dim_for(&self, m: usize) -> usize {
        self.f.unwrap_or_else(|| default_embedding_dim(m))
    }
}

pub fn default_embedding_dim(m: usize) -> usize {
    m.div_ceil(16).max(1)
}

/// f x M embedding with its slowness eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub p: DMatrix<f64>,
    /// Ascending; `eigenvalues[i]` is the slowness energy of row `i`.
    pub eigenvalues: Vec<f64>,
    pub center_time: usize,
    pub ridge: f64,
    /// Set when the f-th and (f+1)-th eigenvalues (or two kept ones) coincide
    /// within tolerance, so the returned rows are one of many optima.
    pub degenerate: bool,
}

impl EmbeddingMatrix {
    pub fn f(&self) -> usize {
        self.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.p.ncols()
    }

    /// Wraps an arbitrary f x M matrix (no optimality implied).
    pub fn from_matrix(p: DMatrix<f64>) -> Self {
        let f = p.nrows();
        Self {
            p,
            eigenvalues: vec![0.0; f],
            center_time: 0,
            ridge: 0.0,
            degenerate: false,
        }
    }

    pub fn write(&self, data: &std::path::Path) -> Result<()> {
        let mut meta = Map::new();
        meta.insert("f".into(), Value::from(self.f()));
        meta.insert("M".into(), Value::from(self.m()));
        meta.insert("center_time".into(), Value::from(self.center_time));
        meta.insert("ridge".into(), Value::from(self.ridge));
        meta.insert("eigenvalues".into(), Value::from(self.eigenvalues.clone()));
        meta.insert("degenerate".into(), Value::from(self.degenerate));
        io::write_matrix(data, "embedding", &self.p, meta)
    }

    pub fn read(data: &std::path::Path) -> Result<Self> {
        let (p, side) = io::read_matrix(data)?;
        let get = |k: &str| side.meta.get(k).cloned().unwrap_or(Value::Null);
        let eigenvalues = serde_json::from_value(get("eigenvalues")).unwrap_or_else(|_| vec![0.0; p.nrows()]);
        Ok(Self {
            eigenvalues,
            center_time: get("center_time").as_u64().unwrap_or(0) as usize,
            ridge: get("ridge").as_f64().unwrap_or(0.0),
            degenerate: get("degenerate").as_bool().unwrap_or(false),
            p,
        })
    }
}

/// Closed-form slowness embedding of a code window.
///
/// `center_time` is stamped as the frame index at the middle of the window.
pub fn solve_embedding(
    codes: &SparseCodeMatrix,
    d: &DerivativeOperator,
    f: usize,
    ridge: f64,
) -> Result<EmbeddingMatrix> {
    solve_embedding_with(codes, d, f, ridge, false)
}

/// Covariance directions with eigenvalue at or below this multiple of the
/// ridge carry no code energy and are left out of the slowness problem.
pub const DEFAULT_RANGE_FACTOR: f64 = 10.0;

pub fn solve_embedding_with(
    codes: &SparseCodeMatrix,
    d: &DerivativeOperator,
    f: usize,
    ridge: f64,
    centered: bool,
) -> Result<EmbeddingMatrix> {
    solve_embedding_ranged(codes, d, f, ridge, centered, DEFAULT_RANGE_FACTOR)
}

/// Solves within the span of covariance eigenvectors whose eigenvalue
/// exceeds `range_factor * ridge`. Unused atoms otherwise give directions of
/// pure ridge that every code maps to zero, which look perfectly slow. If
/// fewer than `f + 1` directions qualify, the largest `f + 1` are used.
/// With every direction kept this equals `U_f^T V^{-1/2}`.
pub fn solve_embedding_ranged(
    codes: &SparseCodeMatrix,
    d: &DerivativeOperator,
    f: usize,
    ridge: f64,
    centered: bool,
    range_factor: f64,
) -> Result<EmbeddingMatrix> {
    let m = codes.m();
    if f == 0 || f >= m {
        return Err(invalid(format!("embedding dimension must satisfy 0 < f < M = {m}, got {f}")));
    }
    if d.size() != codes.width() {
        return Err(shape(format!(
            "derivative operator size {} != window width {}",
            d.size(),
            codes.width()
        )));
    }
    if !(range_factor >= 0.0) || !range_factor.is_finite() {
        return Err(invalid(format!("range factor must be >= 0, got {range_factor}")));
    }
    let cov = compute_covariance(codes, ridge, centered)?;
    let veig = symmetric_eigen(&cov.v)?;
    let cut = range_factor * ridge;
    let mut keep: Vec<usize> = (0..m).filter(|&j| veig.values[j] > cut).collect();
    if keep.len() < f + 1 {
        keep = ((m - (f + 1))..m).collect();
    }
    let r = keep.len();
    // M x r whitening basis E_R Lambda_R^{-1/2}
    let mut basis = DMatrix::zeros(m, r);
    for (c, &j) in keep.iter().enumerate() {
        let lam = veig.values[j].max(ridge);
        if !(lam > 0.0) {
            return Err(invalid("covariance is singular; use a positive ridge"));
        }
        basis.set_column(c, &(veig.vectors.column(j) / lam.sqrt()));
    }

    let ad = d.apply(codes.codes())?;
    let half = basis.transpose() * &ad;
    let q = &half * half.transpose();
    let eig = symmetric_eigen(&q)?;

    let mut p = eig.vectors.columns(0, f).transpose() * basis.transpose();
    // orient each row like its eigenvector in the full coordinates
    let mut rot = DMatrix::zeros(m, r);
    for (c, &j) in keep.iter().enumerate() {
        rot.set_column(c, &veig.vectors.column(j));
    }
    let u_full = &rot * eig.vectors.columns(0, f);
    for i in 0..f {
        let col = u_full.column(i);
        let big = col.iter().fold(0.0f64, |b, &v| if v.abs() > b.abs() { v } else { b });
        if big < 0.0 {
            p.row_mut(i).neg_mut();
        }
    }
    let eigenvalues: Vec<f64> = eig.values[..f].to_vec();

    let scale = eig.values.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let tol = 1e-12 * scale;
    let degenerate = eig.values[..=f.min(r - 1)]
        .windows(2)
        .any(|w| (w[1] - w[0]).abs() <= tol);

    let fi = codes.frame_indices();
    Ok(EmbeddingMatrix {
        p,
        eigenvalues,
        center_time: fi[fi.len() / 2],
        ridge,
        degenerate,
    })
}

/// `||P A D||_F^2`.
pub fn embedding_objective(
    p: &EmbeddingMatrix,
    codes: &SparseCodeMatrix,
    d: &DerivativeOperator,
) -> Result<f64> {
    if p.m() != codes.m() {
        return Err(shape(format!(
            "embedding has {} columns, codes have {} rows",
            p.m(),
            codes.m()
        )));
    }
    let ad = d.apply(codes.codes())?;
    Ok((&p.p * ad).norm_squared())
}

/// Solves the embedding for a window using config defaults for f and ridge.
pub fn solve_window(codes: &SparseCodeMatrix, cfg: &EmbeddingConfig) -> Result<EmbeddingMatrix> {
    let d = build_derivative_operator_with(codes.width(), cfg.interior_only)?;
    let ridge = cfg
        .ridge
        .unwrap_or_else(|| default_ridge(codes, cfg.centered));
    solve_embedding_ranged(codes, &d, cfg.dim_for(codes.m()), ridge, cfg.centered, cfg.range_factor)
}

/// `max |P V P^T - I|`.
pub fn whitening_residual(p: &EmbeddingMatrix, cov: &CovarianceStats) -> f64 {
    let g = &p.p * &cov.v * p.p.transpose();
    let id = DMatrix::identity(g.nrows(), g.ncols());
    crate::linalg::max_abs_diff(&g, &id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_w3() {
        let d = build_derivative_operator(3).unwrap().matrix();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, -0.5, 0.0, -0.5, 1.0, -0.5, 0.0, -0.5, 1.0]);
        assert_eq!(d, want);
    }

    #[test]
    fn derivative_symmetric_and_stencil_matches_dense() {
        for w in [3, 4, 9] {
            let op = build_derivative_operator(w).unwrap();
            let d = op.matrix();
            assert_eq!(d, d.transpose());
            let a = DMatrix::from_fn(2, w, |r, c| ((r * 7 + c * 3) % 5) as f64);
            assert!((op.apply(&a).unwrap() - &a * &d).norm() < 1e-14);
            let inner = build_derivative_operator_with(w, true).unwrap();
            assert!((inner.apply(&a).unwrap() - &a * inner.matrix()).norm() < 1e-14);
        }
        assert!(build_derivative_operator(2).is_err());
    }

    #[test]
    fn covariance_identity_codes() {
        let m = 4;
        let codes = SparseCodeMatrix::with_start(DMatrix::identity(m, m), 0).unwrap();
        let cov = compute_covariance(&codes, 0.01, false).unwrap();
        let want = DMatrix::identity(m, m) * (1.0 / m as f64 + 0.01);
        assert!((cov.v - want).norm() < 1e-15);
    }

    #[test]
    fn inv_sqrt_diagonal() {
        let v = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let cov = covariance_from_matrix(v, 0.0, false).unwrap();
        let want = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 1.0 / 3.0]));
        assert!((cov.inv_sqrt - want).norm() < 1e-14);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let codes = SparseCodeMatrix::with_start(DMatrix::from_element(3, 5, 1.0), 0).unwrap();
        let d = build_derivative_operator(5).unwrap();
        assert!(solve_embedding(&codes, &d, 3, 1e-3).is_err());
        assert!(solve_embedding(&codes, &d, 0, 1e-3).is_err());
        let d4 = build_derivative_operator(4).unwrap();
        assert!(solve_embedding(&codes, &d4, 1, 1e-3).is_err());
    }
}

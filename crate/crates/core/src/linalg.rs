//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{PsmtError, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition (Householder tridiagonalization followed by
/// implicit-shift QR) with eigenvalues sorted in ascending order.
///
/// Each eigenvector is sign-normalized so its largest-magnitude entry is
/// positive; on magnitude ties the lowest index wins.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SortedEigen> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(PsmtError::ShapeMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(PsmtError::NonFinite("symmetric eigenproblem input"));
    }
    // Exact symmetrization; callers pass matrices that are symmetric up to rounding.
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| PsmtError::Eigen("QR iteration did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });

    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut v);
        vectors.set_column(dst, &v);
        values.push(eig.eigenvalues[src]);
    }
    Ok(SortedEigen { values, vectors })
}

fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Largest eigenvalue of `a a^T` by power iteration from the all-ones vector.
///
/// Returns a lower bound on the true value that tightens with `iters`.
pub fn power_iteration_gram(a: &DMatrix<f64>, iters: usize) -> f64 {
    let gram = a * a.transpose();
    let n = gram.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = v.dot(&w);
        v = w / norm;
    }
    let w = &gram * &v;
    estimate.max(v.dot(&w))
}

/// Euclidean norm of each column.
pub fn column_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.norm()).collect()
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_accurate() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let e = symmetric_eigen(&m).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        for i in 0..3 {
            let u = e.vectors.column(i);
            let r = &m * u - u * e.values[i];
            assert!(r.norm() <= 1e-12 * m.norm());
            let (imax, _) = u.iter().enumerate().fold((0, 0.0), |acc, (j, v)| {
                if v.abs() > acc.1 {
                    (j, v.abs())
                } else {
                    acc
                }
            });
            assert!(u[imax] > 0.0);
        }
    }

    #[test]
    fn power_iteration_matches_eigen() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.5, -1.0, 3.0]);
        let top = power_iteration_gram(&a, 200);
        let e = symmetric_eigen(&(&a * a.transpose())).unwrap();
        assert!((top - e.values[1]).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_square() {
        assert!(symmetric_eigen(&DMatrix::zeros(2, 3)).is_err());
    }
}

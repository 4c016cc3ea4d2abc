//! Thin SVD helpers on top of nalgebra: numerical rank, right nullspace and
//! span tests, all with a threshold relative to the largest singular value.

use nalgebra::{DMatrix, DVector};

/// Default relative rank threshold.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct NullspaceResult {
    /// Orthonormal nullspace vectors.
    pub basis: Vec<DVector<f64>>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Right nullspace of `m` by full SVD. Wide matrices are padded with zero
/// rows so the decomposition yields a complete set of right singular vectors.
pub fn nullspace(m: &DMatrix<f64>, tol: f64) -> NullspaceResult {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return NullspaceResult {
            basis: Vec::new(),
            rank: 0,
            singular_values: Vec::new(),
        };
    }
    let padded;
    let work = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        padded = p;
        &padded
    } else {
        m
    };
    let svd = work.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let threshold = tol * smax;
    let mut basis = Vec::new();
    let mut rank = 0;
    for (k, s) in sv.iter().enumerate() {
        if *s > threshold && smax > 0.0 {
            rank += 1;
        } else {
            basis.push(v_t.row(k).transpose());
        }
    }
    let mut sorted = sv;
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    NullspaceResult {
        basis,
        rank,
        singular_values: sorted,
    }
}

/// Numerical rank.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol * smax).count()
}

/// Matrix whose columns are the given vectors.
pub fn columns_to_matrix(cols: &[Vec<f64>], len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(len, cols.len(), |i, j| cols[j][i])
}

/// Orthonormal basis (as matrix columns) of the span of `cols`.
pub fn orthonormal_span(cols: &[Vec<f64>], len: usize, tol: f64) -> DMatrix<f64> {
    if cols.is_empty() {
        return DMatrix::zeros(len, 0);
    }
    let m = columns_to_matrix(cols, len);
    let svd = m.svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| smax > 0.0 && **s > tol * smax)
        .map(|(k, _)| k)
        .collect();
    DMatrix::from_fn(len, keep.len(), |i, j| u[(i, keep[j])])
}

/// `‖v − Q Qᵀ v‖ / ‖v‖` for an orthonormal `q`.
pub fn distance_from_span(q: &DMatrix<f64>, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    let n = v.norm();
    if n == 0.0 {
        return 0.0;
    }
    if q.ncols() == 0 {
        return 1.0;
    }
    let proj = q * (q.transpose() * &v);
    (v - proj).norm() / n
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `|cos|` of the angle between two vectors; 0 when either is zero.
pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nullspace_of_wide_matrix_is_complete() {
        // 1×3 matrix [1 1 1] has a 2-dimensional nullspace.
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let ns = nullspace(&m, DEFAULT_RANK_TOL);
        assert_eq!(ns.rank, 1);
        assert_eq!(ns.basis.len(), 2);
        for v in &ns.basis {
            assert!((&m * v).norm() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn span_distance() {
        let q = orthonormal_span(&[vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]], 3, 1e-9);
        assert_eq!(q.ncols(), 2);
        assert!(distance_from_span(&q, &[3.0, -2.0, 0.0]) < 1e-12);
        assert!((distance_from_span(&q, &[0.0, 0.0, 5.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_sign_blind() {
        assert!((abs_cosine(&[1.0, 2.0], &[-2.0, -4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(abs_cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }
}

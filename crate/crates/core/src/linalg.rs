//! Small dense linear-algebra utilities shared across the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::SolveError;

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..sym.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        sym.eigenvalues[b]
            .partial_cmp(&sym.eigenvalues[a])
            .expect("NaN eigenvalue")
    });
    let vals = DVector::from_fn(order.len(), |i, _| sym.eigenvalues[order[i]]);
    let vecs = DMatrix::from_fn(m.nrows(), order.len(), |i, j| {
        sym.eigenvectors[(i, order[j])]
    });
    (vals, vecs)
}

/// Solve the symmetric-definite generalized problem `A x = lambda B x`
/// (`B` positive definite) returning eigenvalues descending and eigenvectors
/// with `X' B X = I`.
pub fn generalized_symmetric_eigen(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>), SolveError> {
    let chol = nalgebra::Cholesky::new(b.clone())
        .ok_or_else(|| SolveError::Factorization("B in generalized eigensolve".into()))?;
    let l = chol.l();
    // C = L^-1 A L^-T, then A x = lambda B x becomes C y = lambda y, x = L^-T y.
    let y = l
        .solve_lower_triangular(a)
        .ok_or_else(|| SolveError::Factorization("singular triangular factor".into()))?;
    let c_t = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| SolveError::Factorization("singular triangular factor".into()))?;
    let c = 0.5 * (&c_t + c_t.transpose());
    let (vals, u) = sorted_symmetric_eigen(&c);
    let x = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| SolveError::Factorization("singular triangular factor".into()))?;
    Ok((vals, x))
}

/// Symmetric positive semi-definite square root via eigendecomposition.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sorted_symmetric_eigen(m);
    let root = DMatrix::from_fn(vals.len(), vals.len(), |i, j| {
        if i == j {
            vals[i].max(0.0).sqrt()
        } else {
            0.0
        }
    });
    &vecs * root * vecs.transpose()
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Kronecker product of two vectors, `u (x) w`, ordered so entry `i*len(w)+k`
/// is `u[i] * w[k]`.
pub fn kron_vec(u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let (n, k) = (u.len(), w.len());
    DVector::from_fn(n * k, |i, _| u[i / k] * w[i % k])
}

/// Orthonormalize the columns of `y` in the inner product `<x, z> = x' B z`
/// by modified Gram-Schmidt.  `b_mul` applies `B` once per column; repeated
/// inner products reuse the cached `B q_j`.  Columns that collapse below
/// `drop_tol` times their original norm are dropped.
///
/// Returns `(Q, BQ)` with `Q' B Q = I`.
pub fn b_orthonormalize(
    y: &DMatrix<f64>,
    mut b_mul: impl FnMut(&DVector<f64>) -> DVector<f64>,
    passes: usize,
    drop_tol: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = y.nrows();
    let mut q_cols: Vec<DVector<f64>> = Vec::new();
    let mut bq_cols: Vec<DVector<f64>> = Vec::new();
    for k in 0..y.ncols() {
        let mut v: DVector<f64> = y.column(k).into();
        let mut bv = b_mul(&v);
        let norm0 = v.dot(&bv).max(0.0).sqrt();
        for _ in 0..passes.max(1) {
            for (qj, bqj) in q_cols.iter().zip(&bq_cols) {
                let c = bqj.dot(&v);
                v.axpy(-c, qj, 1.0);
                bv.axpy(-c, bqj, 1.0);
            }
        }
        let norm = v.dot(&bv).max(0.0).sqrt();
        if norm <= drop_tol * norm0.max(f64::MIN_POSITIVE) {
            continue;
        }
        q_cols.push(v / norm);
        bq_cols.push(bv / norm);
    }
    let rank = q_cols.len();
    let mut q = DMatrix::zeros(m, rank);
    let mut bq = DMatrix::zeros(m, rank);
    for (j, (qc, bqc)) in q_cols.iter().zip(&bq_cols).enumerate() {
        q.set_column(j, qc);
        bq.set_column(j, bqc);
    }
    (q, bq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vector, SeedSpec};
    use approx::assert_relative_eq;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |i, j| {
            standard_normal_vector(n, SeedSpec::new(seed, i as u64))[j]
        });
        let qr = g.qr();
        let q = qr.q();
        let d = DVector::from_fn(n, |i, _| 0.5 + 1.5 * (i as f64 / n as f64));
        &q * DMatrix::from_diagonal(&d) * q.transpose()
    }

    #[test]
    fn generalized_eigen_reconstructs() {
        let a = random_spd(9, 3);
        let b = random_spd(9, 4);
        let (vals, x) = generalized_symmetric_eigen(&a, &b).unwrap();
        // X' B X = I
        let gram = x.transpose() * &b * &x;
        assert!((gram - DMatrix::identity(9, 9)).amax() < 1e-10);
        // A X = B X diag(vals)
        let lhs = &a * &x;
        let rhs = &b * &x * DMatrix::from_diagonal(&vals);
        assert!((lhs - rhs).amax() < 1e-9);
        for i in 1..9 {
            assert!(vals[i] <= vals[i - 1]);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let m = random_spd(7, 9);
        let r = symmetric_sqrt(&m);
        assert!((&r * &r - &m).amax() < 1e-10);
    }

    #[test]
    fn kron_mixed_product() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 2.0, 1.5, 0.0, 1.0]);
        let u = DVector::from_column_slice(&[1.0, -2.0]);
        let w = DVector::from_column_slice(&[3.0, 0.5, 1.0]);
        // (A (x) B)(u (x) w) = (A u) (x) (B w)
        let lhs = kron(&a, &b) * kron_vec(&u, &w);
        let rhs = kron_vec(&(&a * &u), &(&b * &w));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-13);
    }

    #[test]
    fn b_orthonormalize_full_rank() {
        let b = random_spd(12, 5);
        let y = DMatrix::from_fn(12, 8, |i, j| {
            standard_normal_vector(8, SeedSpec::new(77, i as u64))[j]
        });
        let (q, bq) = b_orthonormalize(&y, |v| &b * v, 2, 1e-12);
        assert_eq!(q.ncols(), 8);
        let gram = q.transpose() * &b * &q;
        assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-12);
        assert!((&b * &q - bq).amax() < 1e-12);
    }

    #[test]
    fn b_orthonormalize_drops_dependent() {
        let b = random_spd(6, 8);
        let mut y = DMatrix::from_fn(6, 3, |i, j| {
            standard_normal_vector(3, SeedSpec::new(12, i as u64))[j]
        });
        let dep = y.column(0) * 2.0 - y.column(1);
        y.set_column(2, &dep);
        let (q, _) = b_orthonormalize(&y, |v| &b * v, 2, 1e-10);
        assert_eq!(q.ncols(), 2);
    }
}

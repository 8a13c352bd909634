//! Dense row-major matrices and the regularized solves behind the ridge
//! surrogate.
//!
//! Everything here is plain `f64`; the dimensions in play are small (features
//! in the tens, training rows in the low thousands), so naive dense kernels
//! are both fast enough and easy to audit. `ridge_solve` and
//! `influence_weights` share one solve path: a Cholesky factorization of
//! `XᵀX + λI`, falling back to pivoted Gaussian elimination when the matrix
//! is not positive definite (possible only at `λ = 0`).

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector of finite `f64` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::from_vec",
                detail: format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "Matrix::from_vec" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape {
                op: "Matrix::from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Borrow row `i` as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vector(&self, i: usize) -> Vector {
        Vector { data: self.row(i).to_vec() }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("{}x{} * {}x{}", self.rows, self.cols, other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for j in 0..other.cols {
                    out_row[j] += a_ik * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape {
                op: "matmul_nt",
                detail: format!("{}x{} * ({}x{})^T", self.rows, self.cols, other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += a_row[k] * b_row[k];
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape {
                op: "matmul_tn",
                detail: format!("({}x{})^T * {}x{}", self.rows, self.cols, other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for i in 0..self.cols {
                let a_ri = a_row[i];
                if a_ri == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for j in 0..other.cols {
                    out_row[j] += a_ri * b_row[j];
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::Shape {
                op: "matvec",
                detail: format!("{}x{} * {}", self.rows, self.cols, v.len()),
            });
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            out[i] = dot(self.row(i), v.as_slice());
        }
        Ok(Vector { data: out })
    }
}

impl Vector {
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "Vector::from_vec" });
        }
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self { data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Shape {
                op: "dot",
                detail: format!("{} vs {}", self.len(), other.len()),
            });
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Vector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Shape {
                op: "distance",
                detail: format!("{} vs {}", self.len(), other.len()),
            });
        }
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            let d = a - b;
            acc += d * d;
        }
        Ok(acc.sqrt())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Assembles the ridge normal matrix `XᵀX + λI` (p×p, symmetric).
fn ridge_gram(x: &Matrix, lambda: f64) -> Matrix {
    let p = x.cols();
    let mut a = Matrix::zeros(p, p);
    for r in 0..x.rows() {
        let row = x.row(r);
        for i in 0..p {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..p {
                a.data[i * p + j] += xi * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            a.data[i * p + j] = a.data[j * p + i];
        }
        a.data[i * p + i] += lambda;
    }
    a
}

/// In-place Cholesky solve of a symmetric positive-definite system.
/// Returns `None` when a pivot fails, signalling the caller to fall back.
fn cholesky_solve(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    debug_assert_eq!(a.cols(), n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    // forward substitution L w = b
    let mut w = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            w[i] -= l[i * n + k] * w[k];
        }
        w[i] /= l[i * n + i];
    }
    // back substitution Lᵀ v = w
    for i in (0..n).rev() {
        for k in i + 1..n {
            w[i] -= l[k * n + i] * w[k];
        }
        w[i] /= l[i * n + i];
    }
    Some(w)
}

/// Gaussian elimination with partial pivoting; the fallback solve path.
fn gaussian_solve(a: &Matrix, b: &[f64], matrix_name: &'static str, lambda: f64) -> Result<Vec<f64>> {
    let n = a.rows();
    let mut m = a.data.clone();
    let mut rhs = b.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = m[col * n + col].abs();
        for r in col + 1..n {
            let v = m[r * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val <= 1e-12 * scale {
            return Err(Error::Singular { matrix: matrix_name, lambda });
        }
        if pivot_row != col {
            for j in 0..n {
                m.swap(col * n + j, pivot_row * n + j);
            }
            rhs.swap(col, pivot_row);
        }
        let piv = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / piv;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= m[i * n + j] * rhs[j];
        }
        rhs[i] = s / m[i * n + i];
    }
    Ok(rhs)
}

fn solve_normal_system(a: &Matrix, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    match cholesky_solve(a, b) {
        Some(sol) => Ok(sol),
        None => gaussian_solve(a, b, "XᵀX", lambda),
    }
}

/// Ridge regression coefficients `θ = (XᵀX + λI)⁻¹ Xᵀ y`.
///
/// With `λ > 0` the system is positive definite and always solvable; at
/// `λ = 0` a singular `XᵀX` is reported as an error.
pub fn ridge_solve(x: &Matrix, y: &Vector, lambda: f64) -> Result<Vector> {
    if x.rows() != y.len() {
        return Err(Error::Shape {
            op: "ridge_solve",
            detail: format!("X is {}x{} but y has {} entries", x.rows(), x.cols(), y.len()),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    let a = ridge_gram(x, lambda);
    let b = x.transpose().matvec(y)?;
    let theta = solve_normal_system(&a, b.as_slice(), lambda)?;
    Vector::from_vec(theta)
}

/// Influence weights `z = xᵀ (XᵀX + λI)⁻¹ Xᵀ`, one entry per training row.
///
/// Computed by solving `(XᵀX + λI) w = x` and then `z = X w`, so that
/// `z · y` equals the ridge prediction `θᵀ x` for any label vector `y`.
pub fn influence_weights(x: &Matrix, query: &Vector, lambda: f64) -> Result<Vector> {
    if x.cols() != query.len() {
        return Err(Error::Shape {
            op: "influence_weights",
            detail: format!("X has {} columns but x has {} entries", x.cols(), query.len()),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    let a = ridge_gram(x, lambda);
    let w = solve_normal_system(&a, query.as_slice(), lambda)?;
    let w = Vector::from_vec(w)?;
    x.matvec(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn random_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_vector(rng: &mut ChaCha20Rng, len: usize) -> Vector {
        Vector::from_vec((0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    /// Independent oracle: ikj triple loop, distinct from the production kernel.
    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// Independent oracle: Gauss-Jordan dense inverse.
    fn dense_inverse(a: &Matrix) -> Matrix {
        let n = a.rows();
        let mut aug = vec![0.0; n * 2 * n];
        for i in 0..n {
            for j in 0..n {
                aug[i * 2 * n + j] = a.get(i, j);
            }
            aug[i * 2 * n + n + i] = 1.0;
        }
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&r1, &r2| {
                    aug[r1 * 2 * n + col]
                        .abs()
                        .partial_cmp(&aug[r2 * 2 * n + col].abs())
                        .unwrap()
                })
                .unwrap();
            if pivot_row != col {
                for j in 0..2 * n {
                    aug.swap(col * 2 * n + j, pivot_row * 2 * n + j);
                }
            }
            let piv = aug[col * 2 * n + col];
            assert!(piv.abs() > 1e-14, "oracle inverse hit a singular pivot");
            for j in 0..2 * n {
                aug[col * 2 * n + j] /= piv;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = aug[r * 2 * n + col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..2 * n {
                    aug[r * 2 * n + j] -= f * aug[col * 2 * n + j];
                }
            }
        }
        let mut inv = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                inv.set(i, j, aug[i * 2 * n + n + j]);
            }
        }
        inv
    }

    #[test]
    fn matmul_identity_is_noop() {
        let a = Matrix::from_vec(2, 2, vec![3.0, -1.0, 0.5, 2.0]).unwrap();
        let i2 = Matrix::identity(2);
        assert_eq!(i2.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_is_associative_on_random_3x3() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_matrix(&mut rng, 3, 3);
            let b = random_matrix(&mut rng, 3, 3);
            let c = random_matrix(&mut rng, 3, 3);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (l, r) in left.as_slice().iter().zip(right.as_slice()) {
                assert!((l - r).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matmul_matches_naive_oracle_up_to_32() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for &(r, k, c) in &[(1, 1, 1), (4, 7, 3), (16, 5, 9), (32, 32, 32)] {
            let a = random_matrix(&mut rng, r, k);
            let b = random_matrix(&mut rng, k, c);
            let got = a.matmul(&b).unwrap();
            let want = naive_matmul(&a, &b);
            for (g, w) in got.as_slice().iter().zip(want.as_slice()) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matmul_rejects_dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Shape { .. })));
    }

    #[test]
    fn transposed_products_match_plain_matmul() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 5, 4);
        let b = random_matrix(&mut rng, 6, 4);
        let nt = a.matmul_nt(&b).unwrap();
        let want = a.matmul(&b.transpose()).unwrap();
        for (g, w) in nt.as_slice().iter().zip(want.as_slice()) {
            assert!((g - w).abs() < 1e-12);
        }
        let c = random_matrix(&mut rng, 5, 7);
        let tn = a.matmul_tn(&c).unwrap();
        let want = a.transpose().matmul(&c).unwrap();
        for (g, w) in tn.as_slice().iter().zip(want.as_slice()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            Vector::from_vec(vec![f64::INFINITY]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn ridge_identity_cases() {
        let x = Matrix::identity(2);
        let y = Vector::from_vec(vec![1.0, 0.0]).unwrap();
        let theta = ridge_solve(&x, &y, 0.0).unwrap();
        assert!((theta.get(0) - 1.0).abs() < 1e-12);
        assert!(theta.get(1).abs() < 1e-12);

        // (I + I)⁻¹ y = y / 2
        let theta = ridge_solve(&x, &y, 1.0).unwrap();
        assert!((theta.get(0) - 0.5).abs() < 1e-12);
        assert!(theta.get(1).abs() < 1e-12);
    }

    #[test]
    fn ridge_matches_dense_inverse_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let x = random_matrix(&mut rng, 6, 3);
        let y = random_vector(&mut rng, 6);
        let lambda = 0.1;
        let theta = ridge_solve(&x, &y, lambda).unwrap();

        let a = ridge_gram(&x, lambda);
        let inv = dense_inverse(&a);
        let xty = x.transpose().matvec(&y).unwrap();
        let want = inv.matvec(&xty).unwrap();
        for i in 0..3 {
            assert!((theta.get(i) - want.get(i)).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_residual_is_tiny() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        for _ in 0..20 {
            let n = rng.gen_range(3..24);
            let p = rng.gen_range(1..8);
            let x = random_matrix(&mut rng, n, p);
            let y = random_vector(&mut rng, n);
            let lambda = rng.gen_range(0.001..1.0);
            let theta = ridge_solve(&x, &y, lambda).unwrap();
            let a = ridge_gram(&x, lambda);
            let b = x.transpose().matvec(&y).unwrap();
            let lhs = a.matvec(&theta).unwrap();
            let mut num = 0.0;
            for i in 0..p {
                num += (lhs.get(i) - b.get(i)).powi(2);
            }
            let rel = num.sqrt() / b.norm().max(1e-300);
            assert!(rel < 1e-8, "relative residual {rel}");
        }
    }

    #[test]
    fn singular_system_at_lambda_zero_is_reported() {
        // Rank-deficient X: duplicate column.
        let x = Matrix::from_vec(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let y = Vector::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        match ridge_solve(&x, &y, 0.0) {
            Err(Error::Singular { matrix, .. }) => assert_eq!(matrix, "XᵀX"),
            other => panic!("expected singularity error, got {other:?}"),
        }
        // The same system is solvable with any positive lambda.
        assert!(ridge_solve(&x, &y, 1e-2).is_ok());
    }

    #[test]
    fn influence_identity_cases() {
        let x = Matrix::identity(2);
        let e1 = Vector::from_vec(vec![1.0, 0.0]).unwrap();
        let z = influence_weights(&x, &e1, 0.0).unwrap();
        assert!((z.get(0) - 1.0).abs() < 1e-12 && z.get(1).abs() < 1e-12);
        let z = influence_weights(&x, &e1, 1.0).unwrap();
        assert!((z.get(0) - 0.5).abs() < 1e-12 && z.get(1).abs() < 1e-12);
    }

    #[test]
    fn influence_agrees_with_ridge_prediction_for_any_labels() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let x = random_matrix(&mut rng, 8, 3);
        let q = random_vector(&mut rng, 3);
        let lambda = 0.05;
        let z = influence_weights(&x, &q, lambda).unwrap();
        for _ in 0..10 {
            let y = random_vector(&mut rng, 8);
            let theta = ridge_solve(&x, &y, lambda).unwrap();
            let via_z = z.dot(&y).unwrap();
            let via_theta = theta.dot(&q).unwrap();
            assert!((via_z - via_theta).abs() < 1e-8, "{via_z} vs {via_theta}");
        }
    }

    #[test]
    fn influence_matches_dense_inverse_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        for _ in 0..10 {
            let n = rng.gen_range(4..16);
            let p = rng.gen_range(2..6);
            let x = random_matrix(&mut rng, n, p);
            let q = random_vector(&mut rng, p);
            let lambda = rng.gen_range(0.01..0.5);
            let z = influence_weights(&x, &q, lambda).unwrap();

            let inv = dense_inverse(&ridge_gram(&x, lambda));
            let w = inv.matvec(&q).unwrap();
            let want = x.matvec(&w).unwrap();
            for i in 0..n {
                assert!((z.get(i) - want.get(i)).abs() < 1e-8);
            }
        }
    }
}

//! Minimal dense linear algebra: matrices, pivoted-QR least squares,
//! symmetric eigenvalue bounds, and a small generic Gaussian solve used by
//! the feedback elimination on dual numbers.

use crate::scalar::Scalar;
use crate::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Construct from row-major entries, rejecting NaN/Inf.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Dimension("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Matrix::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `y^T A` for a row vector `y`.
    pub fn vecmat(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| y[i] * self[(i, j)]).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.add(&other.scaled(-1.0))
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.norm_inf()
    }

    /// Symmetrize in place: `(A + A^T)/2`.
    pub fn symmetrized(&self) -> Matrix {
        self.add(&self.transpose()).scaled(0.5)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|v| c * v).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Default relative rank tolerance for the pivoted QR.
pub const DEFAULT_RANK_RTOL: f64 = 1e-12;

/// Householder QR with column pivoting.
///
/// Returns `(q, r, perm)` with `a[:, perm] = q * r`, `q` of shape m-by-m.
pub fn qr_col_pivot(a: &Matrix) -> (Matrix, Matrix, Vec<usize>) {
    let (m, n) = (a.rows(), a.cols());
    let mut r = a.clone();
    let mut q = Matrix::identity(m);
    let mut perm: Vec<usize> = (0..n).collect();
    let kmax = m.min(n);
    for k in 0..kmax {
        // pivot: column with largest remaining two-norm
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..n {
            let mut s = 0.0;
            for i in k..m {
                s += r[(i, j)] * r[(i, j)];
            }
            if s > best_norm {
                best_norm = s;
                best = j;
            }
        }
        if best != k {
            for i in 0..m {
                let tmp = r[(i, k)];
                r[(i, k)] = r[(i, best)];
                r[(i, best)] = tmp;
            }
            perm.swap(k, best);
        }
        // Householder vector for column k
        let mut alpha = 0.0;
        for i in k..m {
            alpha += r[(i, k)] * r[(i, k)];
        }
        alpha = libm::sqrt(alpha);
        if alpha == 0.0 {
            continue;
        }
        if r[(k, k)] > 0.0 {
            alpha = -alpha;
        }
        let mut v = vec![0.0; m - k];
        v[0] = r[(k, k)] - alpha;
        for i in k + 1..m {
            v[i - k] = r[(i, k)];
        }
        let vnorm2 = dot(&v, &v);
        if vnorm2 == 0.0 {
            continue;
        }
        // apply H = I - 2 v v^T / (v^T v) to R (cols k..) and accumulate into Q
        for j in k..n {
            let mut s = 0.0;
            for i in k..m {
                s += v[i - k] * r[(i, j)];
            }
            let c = 2.0 * s / vnorm2;
            for i in k..m {
                r[(i, j)] -= c * v[i - k];
            }
        }
        for j in 0..m {
            let mut s = 0.0;
            for i in k..m {
                s += v[i - k] * q[(i, j)];
            }
            let c = 2.0 * s / vnorm2;
            for i in k..m {
                q[(i, j)] -= c * v[i - k];
            }
        }
    }
    // q currently holds Q^T accumulated; transpose to return Q
    (q.transpose(), r, perm)
}

/// Least-squares solve `argmin |Ax - b|` via QR with column pivoting.
///
/// Fails with [`Error::RankDeficient`] when a pivoted diagonal of `R` falls
/// below `rtol * |R00|`.
pub fn solve_least_squares_rtol(a: &Matrix, b: &[f64], rtol: f64) -> Result<Vec<f64>> {
    let (m, n) = (a.rows(), a.cols());
    if b.len() != m {
        return Err(Error::Dimension(format!(
            "rhs length {} vs {} rows",
            b.len(),
            m
        )));
    }
    if m < n || n == 0 {
        return Err(Error::Dimension(format!("need m >= n >= 1, got {m}x{n}")));
    }
    let (q, r, perm) = qr_col_pivot(a);
    let r00 = r[(0, 0)].abs();
    for k in 0..n {
        let d = r[(k, k)].abs();
        if d < rtol * r00 || r00 == 0.0 {
            return Err(Error::RankDeficient { pivot: k, diag: d });
        }
    }
    // y = Q^T b, then back-substitution on R[0..n, 0..n]
    let y = q.transpose().matvec(b);
    let mut z = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = y[k];
        for j in k + 1..n {
            s -= r[(k, j)] * z[j];
        }
        z[k] = s / r[(k, k)];
    }
    let mut x = vec![0.0; n];
    for k in 0..n {
        x[perm[k]] = z[k];
    }
    Ok(x)
}

/// [`solve_least_squares_rtol`] with the default rank tolerance.
pub fn solve_least_squares(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    solve_least_squares_rtol(a, b, DEFAULT_RANK_RTOL)
}

/// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi iteration.
///
/// The input must be symmetric to `1e-10` relative; the result is accurate to
/// machine precision (far inside the documented `1e-9` relative bound).
pub fn eig_min_symmetric(a: &Matrix) -> Result<f64> {
    let n = a.rows();
    if a.cols() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "square matrix required, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.max_abs().max(1e-300);
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym / scale));
    }
    let mut w = a.symmetrized();
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += w[(i, j)] * w[(i, j)];
            }
        }
        if libm::sqrt(off) <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = w[(p, q)];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let wkp = w[(k, p)];
                    let wkq = w[(k, q)];
                    w[(k, p)] = c * wkp - s * wkq;
                    w[(k, q)] = s * wkp + c * wkq;
                }
                for k in 0..n {
                    let wpk = w[(p, k)];
                    let wqk = w[(q, k)];
                    w[(p, k)] = c * wpk - s * wqk;
                    w[(q, k)] = s * wpk + c * wqk;
                }
            }
        }
    }
    let mut min = f64::INFINITY;
    for i in 0..n {
        min = min.min(w[(i, i)]);
    }
    Ok(min)
}

/// Gaussian elimination with partial pivoting, generic over [`Scalar`].
///
/// Used for the small feedback systems (`H_uu`, `Gamma`) so the same solve
/// runs on plain floats and on dual numbers. Pivoting compares primal values.
pub fn solve_small<S: Scalar>(a: &[Vec<S>], b: &[S]) -> Result<Vec<S>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("solve_small shape".into()));
    }
    let mut m: Vec<Vec<S>> = a.to_vec();
    let mut rhs: Vec<S> = b.to_vec();
    for k in 0..n {
        let mut piv = k;
        let mut best = m[k][k].value().abs();
        for i in k + 1..n {
            let v = m[i][k].value().abs();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::RankDeficient { pivot: k, diag: best });
        }
        m.swap(k, piv);
        rhs.swap(k, piv);
        for i in k + 1..n {
            let factor = m[i][k].clone() / m[k][k].clone();
            for j in k..n {
                m[i][j] = m[i][j].clone() - factor.clone() * m[k][j].clone();
            }
            rhs[i] = rhs[i].clone() - factor * rhs[k].clone();
        }
    }
    let mut x = alloc::vec![S::zero(); n];
    for k in (0..n).rev() {
        let mut s = rhs[k].clone();
        for j in k + 1..n {
            s = s - m[k][j].clone() * x[j].clone();
        }
        x[k] = s / m[k][k].clone();
    }
    Ok(x)
}

/// Determinant of a small matrix of primal values (for degeneracy checks).
pub fn det_small(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut det = 1.0;
    for k in 0..n {
        let mut piv = k;
        let mut best = m[k][k].abs();
        for i in k + 1..n {
            if m[i][k].abs() > best {
                best = m[i][k].abs();
                piv = i;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != k {
            m.swap(k, piv);
            det = -det;
        }
        det *= m[k][k];
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    det
}

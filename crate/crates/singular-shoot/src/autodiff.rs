//! Forward-mode automatic differentiation.
//!
//! [`Dual`] is a first-order dual number over any [`Scalar`], so it nests:
//! `Dual<Dual<f64>>` propagates second derivatives and so on. [`Dual2`] is a
//! flat second-order number carrying a gradient and the upper triangle of a
//! Hessian; it is cheaper than nesting when a full symmetric Hessian of a
//! scalar map is wanted and is symmetric by construction.
//!
//! An empty partials vector means "constant": it behaves as a zero vector of
//! whatever width the surrounding expression uses, which keeps literals and
//! lifted parameters allocation-free.

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Debug, PartialEq)]
pub struct Dual<S> {
    pub val: S,
    /// Partial derivatives w.r.t. the seeded variables; empty = constant.
    pub d: Vec<S>,
}

impl<S: Scalar> Dual<S> {
    pub fn constant(val: S) -> Self {
        Dual { val, d: Vec::new() }
    }

    /// Variable number `idx` out of `width` seeded independents.
    pub fn variable(val: S, idx: usize, width: usize) -> Self {
        let mut d = vec![S::zero(); width];
        d[idx] = S::one();
        Dual { val, d }
    }

    fn zip(a: &[S], b: &[S], f: impl Fn(&S, &S) -> S) -> Vec<S> {
        if a.is_empty() {
            let z = S::zero();
            return b.iter().map(|y| f(&z, y)).collect();
        }
        if b.is_empty() {
            let z = S::zero();
            return a.iter().map(|x| f(x, &z)).collect();
        }
        debug_assert_eq!(a.len(), b.len(), "dual width mismatch");
        a.iter().zip(b.iter()).map(|(x, y)| f(x, y)).collect()
    }

    fn map(&self, f: impl Fn(&S) -> S) -> Vec<S> {
        self.d.iter().map(f).collect()
    }
}

/// Seed every entry of `x` as an independent variable.
pub fn seed<S: Scalar>(x: &[S]) -> Vec<Dual<S>> {
    let k = x.len();
    x.iter()
        .enumerate()
        .map(|(i, v)| Dual::variable(v.clone(), i, k))
        .collect()
}

/// Lift entries of `x` as constants (no derivative tracking).
pub fn lift<S: Scalar>(x: &[S]) -> Vec<Dual<S>> {
    x.iter().map(|v| Dual::constant(v.clone())).collect()
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Dual {
            d: Dual::zip(&self.d, &rhs.d, |a, b| a.clone() + b.clone()),
            val: self.val + rhs.val,
        }
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Dual {
            d: Dual::zip(&self.d, &rhs.d, |a, b| a.clone() - b.clone()),
            val: self.val - rhs.val,
        }
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Dual {
            d: Dual::zip(&self.d, &rhs.d, |a, b| {
                a.clone() * rhs.val.clone() + b.clone() * self.val.clone()
            }),
            val: self.val.clone() * rhs.val,
        }
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let denom = rhs.val.clone() * rhs.val.clone();
        Dual {
            d: Dual::zip(&self.d, &rhs.d, |a, b| {
                (a.clone() * rhs.val.clone() - b.clone() * self.val.clone()) / denom.clone()
            }),
            val: self.val / rhs.val,
        }
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual {
            d: self.map(|a| -a.clone()),
            val: -self.val,
        }
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn from_f64(c: f64) -> Self {
        Dual::constant(S::from_f64(c))
    }

    fn value(&self) -> f64 {
        self.val.value()
    }

    fn sqrt(self) -> Self {
        let r = self.val.clone().sqrt();
        let half_inv = S::from_f64(0.5) / r.clone();
        Dual {
            d: self.map(|a| a.clone() * half_inv.clone()),
            val: r,
        }
    }

    fn exp(self) -> Self {
        let e = self.val.clone().exp();
        Dual {
            d: self.map(|a| a.clone() * e.clone()),
            val: e,
        }
    }

    fn ln(self) -> Self {
        Dual {
            d: self.map(|a| a.clone() / self.val.clone()),
            val: self.val.clone().ln(),
        }
    }

    fn sin(self) -> Self {
        let c = self.val.clone().cos();
        Dual {
            d: self.map(|a| a.clone() * c.clone()),
            val: self.val.sin(),
        }
    }

    fn cos(self) -> Self {
        let s = self.val.clone().sin();
        Dual {
            d: self.map(|a| -(a.clone() * s.clone())),
            val: self.val.cos(),
        }
    }
}

/// Jacobian rows of a fallible vector map, generic over the base scalar.
///
/// Returns `(values, rows)` where `rows[i][j] = d f_i / d x_j`.
pub fn jacobian_rows<S, F>(f: F, x: &[S]) -> Result<(Vec<S>, Vec<Vec<S>>)>
where
    S: Scalar,
    F: FnOnce(&[Dual<S>]) -> Result<Vec<Dual<S>>>,
{
    let k = x.len();
    let out = f(&seed(x))?;
    let mut vals = Vec::with_capacity(out.len());
    let mut rows = Vec::with_capacity(out.len());
    for o in out {
        vals.push(o.val);
        let mut row = o.d;
        if row.is_empty() {
            row = vec![S::zero(); k];
        }
        debug_assert_eq!(row.len(), k);
        rows.push(row);
    }
    Ok((vals, rows))
}

/// Gradient of a fallible scalar map, generic over the base scalar.
pub fn gradient<S, F>(f: F, x: &[S]) -> Result<(S, Vec<S>)>
where
    S: Scalar,
    F: FnOnce(&[Dual<S>]) -> Result<Dual<S>>,
{
    let k = x.len();
    let o = f(&seed(x))?;
    let mut g = o.d;
    if g.is_empty() {
        g = vec![S::zero(); k];
    }
    Ok((o.val, g))
}

/// Jacobian of a map `R^k -> R^j` as a dense matrix, entries exact to
/// floating-point rounding.
pub fn jacobian<F>(f: F, x: &[f64]) -> Result<Matrix>
where
    F: FnOnce(&[Dual<f64>]) -> Result<Vec<Dual<f64>>>,
{
    let (vals, rows) = jacobian_rows(f, x)?;
    let mut m = Matrix::zeros(vals.len(), x.len());
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Domain(alloc::format!(
                    "non-finite Jacobian entry ({i},{j})"
                )));
            }
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Second-order number: value, gradient and upper-triangular Hessian.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual2 {
    pub val: f64,
    /// Gradient; empty = constant.
    pub g: Vec<f64>,
    /// Upper triangle of the Hessian, row-major: entry `(i,j)`, `i <= j`,
    /// lives at `i*k - i*(i-1)/2 + (j - i)`. Empty = constant.
    pub h: Vec<f64>,
}

fn tri_len(k: usize) -> usize {
    k * (k + 1) / 2
}

fn tri_at(k: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    (i * (2 * k - i + 1)) / 2 + (j - i)
}

impl Dual2 {
    pub fn constant(val: f64) -> Self {
        Dual2 {
            val,
            g: Vec::new(),
            h: Vec::new(),
        }
    }

    pub fn variable(val: f64, idx: usize, width: usize) -> Self {
        let mut g = vec![0.0; width];
        g[idx] = 1.0;
        Dual2 {
            val,
            g,
            h: vec![0.0; tri_len(width)],
        }
    }

    fn width(&self, other: &Self) -> usize {
        self.g.len().max(other.g.len())
    }

    fn grow(v: &[f64], n: usize) -> Vec<f64> {
        if v.len() == n {
            v.to_vec()
        } else {
            debug_assert!(v.is_empty());
            vec![0.0; n]
        }
    }

    /// Apply a smooth univariate function given `f(v)`, `f'(v)`, `f''(v)`.
    fn chain(&self, fv: f64, d1: f64, d2: f64) -> Self {
        let k = self.g.len();
        let g: Vec<f64> = self.g.iter().map(|gi| d1 * gi).collect();
        let mut h = Vec::with_capacity(self.h.len());
        for i in 0..k {
            for j in i..k {
                h.push(d1 * self.h[tri_at(k, i, j)] + d2 * self.g[i] * self.g[j]);
            }
        }
        Dual2 { val: fv, g, h }
    }
}

impl Add for Dual2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let k = self.width(&rhs);
        let ga = Dual2::grow(&self.g, k);
        let gb = Dual2::grow(&rhs.g, k);
        let ha = Dual2::grow(&self.h, tri_len(k));
        let hb = Dual2::grow(&rhs.h, tri_len(k));
        Dual2 {
            val: self.val + rhs.val,
            g: ga.iter().zip(&gb).map(|(a, b)| a + b).collect(),
            h: ha.iter().zip(&hb).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for Dual2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for Dual2 {
    type Output = Self;
    fn neg(self) -> Self {
        Dual2 {
            val: -self.val,
            g: self.g.iter().map(|a| -a).collect(),
            h: self.h.iter().map(|a| -a).collect(),
        }
    }
}

impl Mul for Dual2 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let k = self.width(&rhs);
        let ga = Dual2::grow(&self.g, k);
        let gb = Dual2::grow(&rhs.g, k);
        let ha = Dual2::grow(&self.h, tri_len(k));
        let hb = Dual2::grow(&rhs.h, tri_len(k));
        let mut h = Vec::with_capacity(tri_len(k));
        for i in 0..k {
            for j in i..k {
                let t = tri_at(k, i, j);
                h.push(self.val * hb[t] + rhs.val * ha[t] + ga[i] * gb[j] + ga[j] * gb[i]);
            }
        }
        Dual2 {
            val: self.val * rhs.val,
            g: ga
                .iter()
                .zip(&gb)
                .map(|(a, b)| a * rhs.val + b * self.val)
                .collect(),
            h,
        }
    }
}

impl Div for Dual2 {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let v = rhs.val;
        let inv = rhs.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v));
        self * inv
    }
}

impl Scalar for Dual2 {
    fn from_f64(c: f64) -> Self {
        Dual2::constant(c)
    }

    fn value(&self) -> f64 {
        self.val
    }

    fn sqrt(self) -> Self {
        let r = libm::sqrt(self.val);
        self.chain(r, 0.5 / r, -0.25 / (r * r * r))
    }

    fn exp(self) -> Self {
        let e = libm::exp(self.val);
        self.chain(e, e, e)
    }

    fn ln(self) -> Self {
        let v = self.val;
        self.chain(libm::log(v), 1.0 / v, -1.0 / (v * v))
    }

    fn sin(self) -> Self {
        let (s, c) = (libm::sin(self.val), libm::cos(self.val));
        self.chain(s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = (libm::sin(self.val), libm::cos(self.val));
        self.chain(c, -s, -c)
    }
}

/// Value, gradient and Hessian of a scalar map in one pass.
///
/// The returned matrix is symmetric bitwise: mirrored entries are copies of
/// the same stored triangle.
pub fn hessian<F>(f: F, x: &[f64]) -> Result<(f64, Vec<f64>, Matrix)>
where
    F: FnOnce(&[Dual2]) -> Result<Dual2>,
{
    let k = x.len();
    let seeded: Vec<Dual2> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| Dual2::variable(v, i, k))
        .collect();
    let o = f(&seeded)?;
    let g = Dual2::grow(&o.g, k);
    let htri = Dual2::grow(&o.h, tri_len(k));
    let mut h = Matrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = htri[tri_at(k, i, j)];
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok((o.val, g, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn jacobian_of_square() {
        // f(x) = x*x at x = 3 -> [[6]]
        let j = jacobian(|x| Ok(vec![x[0].clone() * x[0].clone()]), &[3.0]).unwrap();
        assert_eq!(j[(0, 0)], 6.0);
    }

    #[test]
    fn jacobian_of_linear_map_is_the_matrix() {
        let a = [[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]];
        let j = jacobian(
            |x| {
                Ok((0..2)
                    .map(|i| {
                        (0..3)
                            .map(|k| Dual::from_f64(a[i][k]) * x[k].clone())
                            .fold(Dual::from_f64(0.0), |s, t| s + t)
                    })
                    .collect())
            },
            &[0.3, -0.7, 1.1],
        )
        .unwrap();
        for i in 0..2 {
            for k in 0..3 {
                assert!((j[(i, k)] - a[i][k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hessian_of_half_norm_is_identity() {
        let (_, g, h) = hessian(
            |x| {
                let mut s = Dual2::from_f64(0.0);
                for xi in x {
                    s = s + xi.clone() * xi.clone();
                }
                Ok(s * Dual2::from_f64(0.5))
            },
            &[1.0, -2.0, 0.5],
        )
        .unwrap();
        assert_eq!(g, vec![1.0, -2.0, 0.5]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn hessian_of_bilinear_term() {
        // g(x) = x1*x2 -> [[0,1],[1,0]]
        let (_, _, h) = hessian(|x| Ok(x[0].clone() * x[1].clone()), &[3.0, -4.0]).unwrap();
        assert_eq!(h[(0, 1)], 1.0);
        assert_eq!(h[(1, 0)], 1.0);
        assert_eq!(h[(0, 0)], 0.0);
    }

    #[test]
    fn nested_dual_second_derivative() {
        // d2/dx2 of x^3 at 2 via Dual<Dual<f64>> = 12
        let x0 = 2.0_f64;
        let inner = |x: &[Dual<Dual<f64>>]| -> crate::Result<Vec<Dual<Dual<f64>>>> {
            Ok(vec![x[0].clone() * x[0].clone() * x[0].clone()])
        };
        let outer = Dual::variable(2.0, 0, 1);
        let (_, rows) = jacobian_rows(inner, &[outer]).unwrap();
        // rows[0][0] is d(x^3)/dx as a Dual<f64>: value 3x^2, derivative 6x
        assert!((rows[0][0].val - 3.0 * x0 * x0).abs() < 1e-13);
        assert!((rows[0][0].d[0] - 6.0 * x0).abs() < 1e-13);
    }

    #[test]
    fn division_rule() {
        // f(x,y) = x/y at (1, 2): df = (1/y, -x/y^2) = (0.5, -0.25)
        let (v, rows) = jacobian_rows(
            |z: &[Dual<f64>]| Ok(vec![z[0].clone() / z[1].clone()]),
            &[1.0, 2.0],
        )
        .unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15);
        assert!((rows[0][0] - 0.5).abs() < 1e-15);
        assert!((rows[0][1] + 0.25).abs() < 1e-15);
    }
}

//! Generic scalar abstraction.
//!
//! Model fields, costs and constraints are written once against [`Scalar`]
//! and evaluated on plain `f64` for trajectories, on [`crate::autodiff::Dual`]
//! for Jacobians and on [`crate::autodiff::Dual2`] for Hessians. Nesting
//! `Dual<Dual<f64>>` yields the higher derivatives needed by the Lie bracket
//! machinery without any hand-coded differentiation.

use core::fmt::Debug;
use core::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Embed a constant. Constants carry no derivative information.
    fn from_f64(c: f64) -> Self;

    /// The underlying primal value.
    fn value(&self) -> f64;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    /// Integer power by repeated squaring; exact for the polynomial models.
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::from_f64(1.0);
        }
        let mut base = if n < 0 {
            Self::from_f64(1.0) / self
        } else {
            self
        };
        let mut k = n.unsigned_abs();
        let mut acc: Option<Self> = None;
        while k > 0 {
            if k & 1 == 1 {
                acc = Some(match acc {
                    None => base.clone(),
                    Some(a) => a * base.clone(),
                });
            }
            k >>= 1;
            if k > 0 {
                base = base.clone() * base;
            }
        }
        acc.unwrap()
    }

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Scalar for f64 {
    fn from_f64(c: f64) -> f64 {
        c
    }

    fn value(&self) -> f64 {
        *self
    }

    fn sqrt(self) -> f64 {
        libm::sqrt(self)
    }

    fn exp(self) -> f64 {
        libm::exp(self)
    }

    fn ln(self) -> f64 {
        libm::log(self)
    }

    fn sin(self) -> f64 {
        libm::sin(self)
    }

    fn cos(self) -> f64 {
        libm::cos(self)
    }
}

/// Lift a slice of constants into any scalar type.
pub fn lift<S: Scalar>(xs: &[f64]) -> alloc::vec::Vec<S> {
    xs.iter().map(|&c| S::from_f64(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn powi_matches_std() {
        for &x in &[0.3_f64, -1.7, 2.0] {
            for n in -3..=5 {
                let got = Scalar::powi(x, n);
                let want = x.powi(n);
                assert!((got - want).abs() <= 1e-14 * want.abs().max(1.0), "{x}^{n}");
            }
        }
    }

    #[test]
    fn libm_backed_functions() {
        assert!((Scalar::sqrt(2.0_f64) - core::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((Scalar::exp(1.0_f64) - core::f64::consts::E).abs() < 1e-15);
        assert!((Scalar::ln(core::f64::consts::E) - 1.0).abs() < 1e-15);
    }
}

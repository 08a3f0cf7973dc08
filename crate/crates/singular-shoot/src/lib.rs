//! Indirect shooting for partially control-affine optimal control problems.
//!
//! Handles dynamics of the form `f0(x,u) + sum_i v_i f_i(x,u)` where `u`
//! enters nonlinearly and `v` linearly. Controls are eliminated in feedback
//! form from the stationarity conditions (`H_u = 0` for `u`, the second time
//! derivative of the switching function for singular components of `v`), the
//! resulting two-point boundary value problem is condensed into a shooting
//! residual, and the overdetermined root-finding problem is solved by
//! Gauss-Newton. Control bounds are handled through a multi-phase
//! reparametrization with the switching times as unknowns.
//!
//! The crate is `no_std` (with `alloc`); IO, file formats and the command
//! line front end live in the companion `singular-shoot-cli` crate.

#![no_std]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod error;
pub mod gauss_newton;
pub mod lie;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod oracle;
pub mod problems;
pub mod scalar;
pub mod second_order;
pub mod shooting;

pub use error::Error;
pub use scalar::Scalar;

/// Convenience result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

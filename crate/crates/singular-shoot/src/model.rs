//! Problem representation and first-order optimality quantities.
//!
//! A problem is a Mayer-form optimal control problem with partially affine
//! dynamics `f(x,u,v) = f0(x,u) + sum_i v_i f_i(x,u)`, endpoint cost
//! `phi(x0,xT)` and endpoint equality constraints `eta(x0,xT) = 0`. Integral
//! costs are lifted into an extra state by the model definitions.

use crate::autodiff;
use crate::scalar::Scalar;
use crate::{Error, Result};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// User-supplied model functions, written once against [`Scalar`] so the
/// same code evaluates on floats and on (nested) dual numbers.
pub trait ProblemFunctions {
    /// Vector field `f_i`, `i = 0` for the drift, `1..=m` for the affine
    /// fields. Must return a vector of the state dimension.
    fn field<S: Scalar>(&self, i: usize, x: &[S], u: &[S]) -> Vec<S>;

    /// Endpoint cost `phi(x0, xT)`.
    fn cost<S: Scalar>(&self, x0: &[S], xt: &[S]) -> S;

    /// Endpoint equality constraints `eta(x0, xT)`.
    fn constraints<S: Scalar>(&self, x0: &[S], xt: &[S]) -> Vec<S>;
}

/// A partially control-affine optimal control problem.
#[derive(Clone, Debug)]
pub struct ProblemDef<P> {
    pub funcs: P,
    /// State dimension `n`.
    pub n: usize,
    /// Nonlinear control dimension `l`.
    pub l: usize,
    /// Affine control dimension `m`.
    pub m: usize,
    /// Horizon `T`.
    pub horizon: f64,
    /// Number of endpoint constraints.
    pub d_eta: usize,
    /// Per-component bounds for the affine controls, empty when unbounded.
    pub v_bounds: Vec<(f64, f64)>,
    /// Interior margin assumed for the nonlinear control set; diagnostic only.
    pub u_set_margin: f64,
    /// Nominal initial state, used by the direct-transcription initializer.
    pub x0_hint: Vec<f64>,
}

impl<P: ProblemFunctions> ProblemDef<P> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        funcs: P,
        n: usize,
        l: usize,
        m: usize,
        horizon: f64,
        v_bounds: Vec<(f64, f64)>,
        u_set_margin: f64,
        x0_hint: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || horizon <= 0.0 || x0_hint.len() != n {
            return Err(Error::InvalidParams(format!(
                "need n >= 1, T > 0, x0_hint of length n (n={n}, T={horizon})"
            )));
        }
        if !v_bounds.is_empty() && v_bounds.len() != m {
            return Err(Error::InvalidParams(String::from(
                "v_bounds must be empty or have one pair per affine control",
            )));
        }
        if v_bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidParams(String::from(
                "v_bounds must satisfy lo < hi",
            )));
        }
        let u0 = vec![0.0; l];
        let d_eta = funcs.constraints::<f64>(&x0_hint, &x0_hint).len();
        let prob = ProblemDef {
            funcs,
            n,
            l,
            m,
            horizon,
            d_eta,
            v_bounds,
            u_set_margin,
            x0_hint,
        };
        // smoke evaluation at the nominal state
        for i in 0..=m {
            let f = prob.funcs.field::<f64>(i, &prob.x0_hint, &u0);
            if f.len() != n {
                return Err(Error::InvalidParams(format!(
                    "field {i} returns {} components, expected {n}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "field {i} non-finite at nominal state"
                )));
            }
        }
        let phi = prob.funcs.cost::<f64>(&prob.x0_hint, &prob.x0_hint);
        if !phi.is_finite() {
            return Err(Error::InvalidParams(String::from(
                "cost non-finite at nominal state",
            )));
        }
        Ok(prob)
    }

    fn check_dims<S>(&self, x: &[S], u: &[S], v: &[S]) -> Result<()> {
        if x.len() != self.n || u.len() != self.l || v.len() != self.m {
            return Err(Error::Dimension(format!(
                "(x,u,v) dims ({},{},{}) vs ({},{},{})",
                x.len(),
                u.len(),
                v.len(),
                self.n,
                self.l,
                self.m
            )));
        }
        Ok(())
    }

    fn check_finite<S: Scalar>(vals: &[S], what: &'static str) -> Result<()> {
        for v in vals {
            if !v.value().is_finite() {
                return Err(Error::Domain(String::from(what)));
            }
        }
        Ok(())
    }

    /// State velocity `f0(x,u) + sum_i v_i f_i(x,u)`.
    pub fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], v: &[S]) -> Result<Vec<S>> {
        self.check_dims(x, u, v)?;
        let mut f = self.funcs.field(0, x, u);
        for i in 0..self.m {
            let fi = self.funcs.field(i + 1, x, u);
            for (fk, fik) in f.iter_mut().zip(fi) {
                *fk = fk.clone() + v[i].clone() * fik;
            }
        }
        Self::check_finite(&f, "dynamics")?;
        Ok(f)
    }

    /// Pre-Hamiltonian `p . f(x,u,v)`.
    pub fn hamiltonian<S: Scalar>(&self, x: &[S], u: &[S], v: &[S], p: &[S]) -> Result<S> {
        let f = self.dynamics(x, u, v)?;
        Ok(dot_s(p, &f))
    }

    /// Endpoint Lagrangian `phi(x0,xT) + beta . eta(x0,xT)`.
    pub fn endpoint_lagrangian<S: Scalar>(&self, x0: &[S], xt: &[S], beta: &[S]) -> Result<S> {
        let mut l = self.funcs.cost(x0, xt);
        let eta = self.funcs.constraints(x0, xt);
        if eta.len() != beta.len() {
            return Err(Error::Dimension(format!(
                "{} constraints vs {} multipliers",
                eta.len(),
                beta.len()
            )));
        }
        for (bj, ej) in beta.iter().zip(eta) {
            l = l + bj.clone() * ej;
        }
        if !l.value().is_finite() {
            return Err(Error::Domain(String::from("endpoint Lagrangian")));
        }
        Ok(l)
    }

    /// Costate velocity `-p . D_x f(x,u,v)` (a row vector).
    pub fn costate_rhs<S: Scalar>(&self, x: &[S], u: &[S], v: &[S], p: &[S]) -> Result<Vec<S>> {
        self.check_dims(x, u, v)?;
        let (_, rows) = autodiff::jacobian_rows(
            |xd| {
                let ud = autodiff::lift(u);
                let vd = autodiff::lift(v);
                self.dynamics(xd, &ud, &vd)
            },
            x,
        )?;
        // pdot_j = -sum_k p_k * (df_k/dx_j)
        let mut pdot = vec![S::zero(); self.n];
        for (k, row) in rows.iter().enumerate() {
            for j in 0..self.n {
                pdot[j] = pdot[j].clone() - p[k].clone() * row[j].clone();
            }
        }
        Self::check_finite(&pdot, "costate dynamics")?;
        Ok(pdot)
    }

    /// Gradients of the endpoint Lagrangian w.r.t. `(x0, xT)`.
    pub fn endpoint_gradients<S: Scalar>(
        &self,
        x0: &[S],
        xt: &[S],
        beta: &[S],
    ) -> Result<(Vec<S>, Vec<S>)> {
        let n = self.n;
        let joint: Vec<S> = x0.iter().chain(xt.iter()).cloned().collect();
        let (_, grad) = autodiff::gradient(
            |z| {
                let bd = autodiff::lift(beta);
                self.endpoint_lagrangian(&z[..n], &z[n..], &bd)
            },
            &joint,
        )?;
        Ok((grad[..n].to_vec(), grad[n..].to_vec()))
    }

    /// Transversality residuals `(p0 + D_x0 l, pT - D_xT l)`, stacked.
    pub fn transversality_residuals<S: Scalar>(
        &self,
        x0: &[S],
        xt: &[S],
        p0: &[S],
        pt: &[S],
        beta: &[S],
    ) -> Result<Vec<S>> {
        let (g0, gt) = self.endpoint_gradients(x0, xt, beta)?;
        let mut out = Vec::with_capacity(2 * self.n);
        for j in 0..self.n {
            out.push(p0[j].clone() + g0[j].clone());
        }
        for j in 0..self.n {
            out.push(pt[j].clone() - gt[j].clone());
        }
        Ok(out)
    }

    /// Switching function `H_v`, component `i` equal to `p . f_{i+1}(x,u)`.
    pub fn switching_function<S: Scalar>(&self, x: &[S], u: &[S], p: &[S]) -> Result<Vec<S>> {
        let mut out = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let fi = self.funcs.field(i + 1, x, u);
            out.push(dot_s(p, &fi));
        }
        Self::check_finite(&out, "switching function")?;
        Ok(out)
    }

    /// Endpoint objective of a trajectory.
    pub fn objective(&self, x0: &[f64], xt: &[f64]) -> f64 {
        self.funcs.cost::<f64>(x0, xt)
    }
}

pub fn dot_s<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + x.clone() * y.clone();
    }
    acc
}

/// Constraint multiplier and initial costate.
#[derive(Clone, Debug, PartialEq)]
pub struct Multiplier {
    pub beta: Vec<f64>,
    pub p0: Vec<f64>,
}

/// A discretized extremal candidate: grid plus state, costate and controls
/// per node. `phase[k]` is the arc index of node `k`; `singular_sets[q]`
/// lists which affine components are singular during phase `q` (all of them
/// for single-phase unconstrained solves).
#[derive(Clone, Debug, PartialEq)]
pub struct Extremal {
    pub grid: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub phase: Vec<usize>,
    pub singular_sets: Vec<Vec<usize>>,
}

impl Extremal {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        let nn = self.grid.len();
        if nn < 2 {
            return Err(Error::Dimension("extremal needs at least two nodes".into()));
        }
        if self.grid[0] != 0.0 || (self.grid[nn - 1] - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::Dimension("grid must cover [0, T]".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Dimension("grid must be strictly increasing".into()));
        }
        if [
            self.x.len(),
            self.p.len(),
            self.u.len(),
            self.v.len(),
            self.phase.len(),
        ]
        .iter()
        .any(|&len| len != nn)
        {
            return Err(Error::Dimension(
                "per-node arrays must share the grid length".into(),
            ));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.grid.len()
    }

    /// Singular index set active at node `k`.
    pub fn singular_at(&self, k: usize) -> &[usize] {
        &self.singular_sets[self.phase[k]]
    }

    /// True when every affine component is singular at node `k`.
    pub fn fully_singular_at(&self, k: usize, m: usize) -> bool {
        self.singular_at(k).len() == m
    }
}

//! Lie and Poisson bracket machinery: time derivatives of the switching
//! function, the singular-control linear system, and the feedback
//! elimination of both controls.
//!
//! Everything is generic over [`Scalar`] so the same code path produces
//! plain evaluations and derivative propagation. Derived fields (nested
//! brackets, `d/dt` of matrix functions) are differentiated by running dual
//! numbers through the bracket computation itself rather than by symbolic
//! expansion.

use crate::autodiff::{self, Dual};
use crate::linalg::{self, Matrix};
use crate::model::{dot_s, ProblemDef, ProblemFunctions};
use crate::scalar::Scalar;
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// Default positive-definiteness tolerance for `H_uu` in the feedback maps.
pub const DEFAULT_SLC_TOL: f64 = 1e-9;

/// Joint residual tolerance of the feedback Newton iteration.
pub const FEEDBACK_TOL: f64 = 1e-12;

const FEEDBACK_MAX_ITER: usize = 50;

/// Lie bracket `[f_i, f_j] = D_x f_j . f_i - D_x f_i . f_j` at `(x, u)`.
///
/// Indices run over `0..=m` with `0` the drift field; derivatives are taken
/// w.r.t. `x` only.
pub fn lie_bracket<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    i: usize,
    j: usize,
    x: &[S],
    u: &[S],
) -> Result<Vec<S>> {
    let fi = prob.funcs.field(i, x, u);
    let fj = prob.funcs.field(j, x, u);
    let (_, dj) = autodiff::jacobian_rows(
        |xd| {
            let ud = autodiff::lift(u);
            Ok(prob.funcs.field(j, xd, &ud))
        },
        x,
    )?;
    let (_, di) = autodiff::jacobian_rows(
        |xd| {
            let ud = autodiff::lift(u);
            Ok(prob.funcs.field(i, xd, &ud))
        },
        x,
    )?;
    let n = prob.n;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = S::zero();
        for s in 0..n {
            acc = acc + dj[k][s].clone() * fi[s].clone() - di[k][s].clone() * fj[s].clone();
        }
        out.push(acc);
    }
    Ok(out)
}

/// The derived field `g_i = [f_0, f_i]` for an affine component index
/// `i` in `1..=m`, evaluated at `(x, u)`.
fn bracket_with_drift<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    i: usize,
    x: &[S],
    u: &[S],
) -> Result<Vec<S>> {
    lie_bracket(prob, 0, i, x, u)
}

/// Nested bracket `[f_outer, [f_0, f_inner]]`; the x-Jacobian of the derived
/// field is obtained by running dual numbers through the bracket itself.
pub fn nested_bracket<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    outer: usize,
    inner: usize,
    x: &[S],
    u: &[S],
) -> Result<Vec<S>> {
    let g = bracket_with_drift(prob, inner, x, u)?;
    let fo = prob.funcs.field(outer, x, u);
    let (_, dg) = autodiff::jacobian_rows(
        |xd| {
            let ud = autodiff::lift(u);
            bracket_with_drift(prob, inner, xd, &ud)
        },
        x,
    )?;
    let (_, dfo) = autodiff::jacobian_rows(
        |xd| {
            let ud = autodiff::lift(u);
            Ok(prob.funcs.field(outer, xd, &ud))
        },
        x,
    )?;
    let n = prob.n;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = S::zero();
        for s in 0..n {
            acc = acc + dg[k][s].clone() * fo[s].clone() - dfo[k][s].clone() * g[s].clone();
        }
        out.push(acc);
    }
    Ok(out)
}

/// `Hdot_v` with the Goh reduction applied: component `i` is `p . [f_0, f_i]`.
///
/// Along extremals the Goh conditions kill the `v`-dependent terms, so this
/// is the time derivative of the switching function there; see
/// [`hv_dot_full`] for the unreduced form.
pub fn hv_dot<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    p: &[S],
) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(prob.m);
    for i in 1..=prob.m {
        let g = bracket_with_drift(prob, i, x, u)?;
        out.push(dot_s(p, &g));
    }
    Ok(out)
}

/// Unreduced `Hdot_v` including the `sum_j v_j p . [f_j, f_i]` terms, for
/// diagnostics that must not assume the Goh conditions.
pub fn hv_dot_full<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    v: &[S],
    p: &[S],
) -> Result<Vec<S>> {
    let mut out = hv_dot(prob, x, u, p)?;
    for i in 1..=prob.m {
        for j in 1..=prob.m {
            if j == i {
                continue;
            }
            let br = lie_bracket(prob, j, i, x, u)?;
            out[i - 1] = out[i - 1].clone() + v[j - 1].clone() * dot_s(p, &br);
        }
    }
    Ok(out)
}

/// Gradient of the pre-Hamiltonian in `u`.
pub fn h_u<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    v: &[S],
    p: &[S],
) -> Result<Vec<S>> {
    let (_, g) = autodiff::gradient(
        |ud| {
            let xd = autodiff::lift(x);
            let vd = autodiff::lift(v);
            let pd = autodiff::lift(p);
            prob.hamiltonian(&xd, ud, &vd, &pd)
        },
        u,
    )?;
    Ok(g)
}

/// Hessian of the pre-Hamiltonian in `u` (rows of `D_u H_u`).
pub fn h_uu<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    v: &[S],
    p: &[S],
) -> Result<Vec<Vec<S>>> {
    let (_, rows) = autodiff::jacobian_rows(
        |ud| {
            let xd = autodiff::lift(x);
            let vd = autodiff::lift(v);
            let pd = autodiff::lift(p);
            h_u(prob, &xd, ud, &vd, &pd)
        },
        u,
    )?;
    Ok(rows)
}

/// Gradient of the pre-Hamiltonian in `x`.
pub fn h_x<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    v: &[S],
    p: &[S],
) -> Result<Vec<S>> {
    let (_, g) = autodiff::gradient(
        |xd| {
            let ud = autodiff::lift(u);
            let vd = autodiff::lift(v);
            let pd = autodiff::lift(p);
            prob.hamiltonian(xd, &ud, &vd, &pd)
        },
        x,
    )?;
    Ok(g)
}

/// Mixed block `H_ux` (l rows of length n).
pub fn h_ux<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    v: &[S],
    p: &[S],
) -> Result<Vec<Vec<S>>> {
    let l = prob.l;
    // jacobian over x of the l-vector H_u: rows indexed by u-component
    let (_, rows_x) = autodiff::jacobian_rows(
        |xd| {
            let ud = autodiff::lift(u);
            let vd = autodiff::lift(v);
            let pd = autodiff::lift(p);
            h_u(prob, xd, &ud, &vd, &pd)
        },
        x,
    )?;
    debug_assert_eq!(rows_x.len(), l);
    Ok(rows_x)
}

/// Jacobian `D_u f` of the full dynamics (n rows of length l).
pub fn f_u_matrix<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    v: &[S],
) -> Result<Vec<Vec<S>>> {
    let (_, rows) = autodiff::jacobian_rows(
        |ud| {
            let xd = autodiff::lift(x);
            let vd = autodiff::lift(v);
            prob.dynamics(&xd, ud, &vd)
        },
        u,
    )?;
    Ok(rows)
}

fn eig_min_of_value_matrix<S: Scalar>(rows: &[Vec<S>]) -> Result<f64> {
    let l = rows.len();
    if l == 0 {
        return Ok(f64::INFINITY);
    }
    let mut m = Matrix::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            m[(i, j)] = rows[i][j].value();
        }
    }
    linalg::eig_min_symmetric(&m.symmetrized())
}

fn check_slc_part_one<S: Scalar>(huu: &[Vec<S>], tol: f64) -> Result<()> {
    let eig_min = eig_min_of_value_matrix(huu)?;
    if eig_min < tol {
        return Err(Error::SlcViolation { eig_min });
    }
    Ok(())
}

/// Time derivative of the nonlinear control along the extremal flow,
/// obtained from `Hdot_u = 0`:
///
/// `udot = -H_uu^{-1} (H_ux f - f_u^T H_x^T)`.
pub fn u_dot_feedback<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    v: &[S],
    p: &[S],
) -> Result<Vec<S>> {
    if prob.l == 0 {
        return Ok(Vec::new());
    }
    let huu = h_uu(prob, x, u, v, p)?;
    check_slc_part_one(&huu, DEFAULT_SLC_TOL)?;
    let hux = h_ux(prob, x, u, v, p)?;
    let hx = h_x(prob, x, u, v, p)?;
    let fu = f_u_matrix(prob, x, u, v)?;
    let f = prob.dynamics(x, u, v)?;
    let mut rhs = Vec::with_capacity(prob.l);
    for i in 0..prob.l {
        let mut acc = S::zero();
        for j in 0..prob.n {
            acc = acc + hux[i][j].clone() * f[j].clone() - fu[j][i].clone() * hx[j].clone();
        }
        rhs.push(-acc);
    }
    linalg::solve_small(&huu, &rhs)
}

/// Second time derivative of the switching function:
///
/// `Hddot_{v_i} = p.[f_0,[f_0,f_i]] + sum_j v_j p.[f_j,[f_0,f_i]]
///              + p . D_u[f_0,f_i] . udot`.
pub fn hv_ddot<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    v: &[S],
    p: &[S],
) -> Result<Vec<S>> {
    let udot = u_dot_feedback(prob, x, u, v, p)?;
    let mut out = Vec::with_capacity(prob.m);
    for i in 1..=prob.m {
        let mut acc = dot_s(p, &nested_bracket(prob, 0, i, x, u)?);
        for j in 1..=prob.m {
            let nb = nested_bracket(prob, j, i, x, u)?;
            acc = acc + v[j - 1].clone() * dot_s(p, &nb);
        }
        if prob.l > 0 {
            // p . D_u g_i . udot
            let (_, dug) = autodiff::jacobian_rows(
                |ud| {
                    let xd = autodiff::lift(x);
                    bracket_with_drift(prob, i, xd.as_slice(), ud)
                },
                u,
            )?;
            for k in 0..prob.n {
                for s in 0..prob.l {
                    acc = acc + p[k].clone() * dug[k][s].clone() * udot[s].clone();
                }
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// The singular-control linear system `Hddot_v = gamma0 + Gamma v = 0`
/// restricted to a set of singular components.
#[derive(Clone, Debug)]
pub struct GammaSystem {
    /// Constant part per singular component; contributions from components
    /// frozen at a bound are folded in.
    pub gamma0: Vec<f64>,
    /// `Gamma[i][j] = d Hddot_{v_i} / d v_j` over the singular set.
    pub gamma: Matrix,
}

/// Generic internals of [`gamma_system`]; components of `v` outside the
/// singular set supply the frozen bang values.
pub fn gamma_parts<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    v: &[S],
    p: &[S],
    singular_set: &[usize],
) -> Result<(Vec<S>, Vec<Vec<S>>)> {
    let ms = singular_set.len();
    // constant part: Hddot_v with the singular components zeroed
    let mut v0 = v.to_vec();
    for &idx in singular_set {
        v0[idx] = S::zero();
    }
    let hdd0 = hv_ddot(prob, x, u, &v0, p)?;
    let gamma0: Vec<S> = singular_set.iter().map(|&i| hdd0[i].clone()).collect();

    // Gamma columns via the derivative of udot w.r.t. v_j:
    // d udot / d v_j = -H_uu^{-1} (H_ux f_j - f_u^T D_x(p.f_j)^T)
    let huu = h_uu(prob, x, u, v, p)?;
    check_slc_part_one(&huu, DEFAULT_SLC_TOL)?;
    let hux = h_ux(prob, x, u, v, p)?;
    let fu = f_u_matrix(prob, x, u, v)?;
    let mut gamma = vec![vec![S::zero(); ms]; ms];
    for (cj, &j) in singular_set.iter().enumerate() {
        let dudv: Vec<S> = if prob.l > 0 {
            let fj = prob.funcs.field(j + 1, x, u);
            // D_x (p . f_j) as an n-vector
            let (_, hvx_j) = autodiff::gradient(
                |xd| {
                    let ud = autodiff::lift(u);
                    let pd = autodiff::lift(p);
                    let fjd = prob.funcs.field(j + 1, xd, &ud);
                    Ok(dot_s(&pd, &fjd))
                },
                x,
            )?;
            let mut rhs = Vec::with_capacity(prob.l);
            for i in 0..prob.l {
                let mut acc = S::zero();
                for k in 0..prob.n {
                    acc = acc + hux[i][k].clone() * fj[k].clone()
                        - fu[k][i].clone() * hvx_j[k].clone();
                }
                rhs.push(-acc);
            }
            linalg::solve_small(&huu, &rhs)?
        } else {
            Vec::new()
        };
        for (ci, &i) in singular_set.iter().enumerate() {
            let nb = nested_bracket(prob, j + 1, i + 1, x, u)?;
            let mut acc = dot_s(p, &nb);
            if prob.l > 0 {
                let (_, dug) = autodiff::jacobian_rows(
                    |ud| {
                        let xd = autodiff::lift(x);
                        bracket_with_drift(prob, i + 1, xd.as_slice(), ud)
                    },
                    u,
                )?;
                for k in 0..prob.n {
                    for s in 0..prob.l {
                        acc = acc + p[k].clone() * dug[k][s].clone() * dudv[s].clone();
                    }
                }
            }
            gamma[ci][cj] = acc;
        }
    }
    Ok((gamma0, gamma))
}

/// Assemble the singular-control system at a point. `v` supplies the values
/// of the non-singular (bang) components; singular slots of `v` are ignored.
pub fn gamma_system<P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[f64],
    u: &[f64],
    v: &[f64],
    p: &[f64],
    singular_set: &[usize],
) -> Result<GammaSystem> {
    let (g0, g) = gamma_parts(prob, x, u, v, p, singular_set)?;
    let ms = singular_set.len();
    let mut gamma = Matrix::zeros(ms, ms);
    for i in 0..ms {
        for j in 0..ms {
            gamma[(i, j)] = g[i][j];
        }
    }
    Ok(GammaSystem { gamma0: g0, gamma })
}

fn gamma_degeneracy_check(gamma_vals: &[Vec<f64>]) -> Result<f64> {
    let ms = gamma_vals.len();
    let det = linalg::det_small(gamma_vals);
    let scale = gamma_vals
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * (1.0 + libm::pow(scale, ms as f64));
    if det.abs() < tol {
        return Err(Error::SingularArcDegenerate { det });
    }
    Ok(det)
}

/// Singular control `v = -Gamma^{-1} gamma0` over the singular set. `fixed_v`
/// supplies bang values for the remaining components.
pub fn singular_v<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    u: &[S],
    p: &[S],
    singular_set: &[usize],
    fixed_v: &[f64],
) -> Result<Vec<S>> {
    let v: Vec<S> = fixed_v.iter().map(|&c| S::from_f64(c)).collect();
    let (gamma0, gamma) = gamma_parts(prob, x, u, &v, p, singular_set)?;
    let vals: Vec<Vec<f64>> = gamma
        .iter()
        .map(|r| r.iter().map(Scalar::value).collect())
        .collect();
    gamma_degeneracy_check(&vals)?;
    let rhs: Vec<S> = gamma0.iter().map(|g| -g.clone()).collect();
    linalg::solve_small(&gamma, &rhs)
}

/// Strengthened Legendre-Clebsch margins at a point:
/// `(eig_min(H_uu), eig_min(-d Hddot_v / d v))`, the second restricted to
/// the singular set (`+inf` when the set is empty).
pub fn slc_margins<P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[f64],
    u: &[f64],
    v: &[f64],
    p: &[f64],
    singular_set: &[usize],
) -> Result<(f64, f64)> {
    let first = if prob.l == 0 {
        f64::INFINITY
    } else {
        let huu = h_uu(prob, x, u, v, p)?;
        eig_min_of_value_matrix(&huu)?
    };
    let second = if singular_set.is_empty() {
        f64::INFINITY
    } else {
        let gs = gamma_system(prob, x, u, v, p, singular_set)?;
        linalg::eig_min_symmetric(&gs.gamma.scaled(-1.0).symmetrized())?
    };
    Ok((first, second))
}

/// A scalar function of `(x, p)` evaluable on any scalar type, for Poisson
/// brackets.
pub trait PhaseFunction {
    fn eval<S: Scalar>(&self, x: &[S], p: &[S]) -> S;
}

/// Canonical Poisson bracket `{g, h} = D_x g . D_p h - D_p g . D_x h`.
pub fn poisson_bracket<G: PhaseFunction, H: PhaseFunction>(
    g: &G,
    h: &H,
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    let n = x.len();
    let joint: Vec<f64> = x.iter().chain(p.iter()).copied().collect();
    let (_, gg) = autodiff::gradient(|z: &[Dual<f64>]| Ok(g.eval(&z[..n], &z[n..])), &joint)?;
    let (_, gh) = autodiff::gradient(|z: &[Dual<f64>]| Ok(h.eval(&z[..n], &z[n..])), &joint)?;
    let mut acc = 0.0;
    for i in 0..n {
        acc += gg[i] * gh[n + i] - gg[n + i] * gh[i];
    }
    Ok(acc)
}

/// Controls in feedback form at `(x, p)`: Newton on `(H_u; Hddot_v) = 0`
/// using the block-triangular structure (inner Newton on `u` with `H_uu`,
/// then the affine solve for the singular `v`), iterated to the joint
/// tolerance. Components outside `singular_set` are frozen at `fixed_v`.
///
/// When the inputs carry derivative information the primal solution is
/// lifted through the implicit function theorem, so the outputs are
/// first-order differentiable in `(x, p)`.
pub fn feedback_controls<S: Scalar, P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    x: &[S],
    p: &[S],
    guess_u: &[f64],
    guess_v: &[f64],
    singular_set: &[usize],
    fixed_v: &[f64],
) -> Result<(Vec<S>, Vec<S>)> {
    let xv: Vec<f64> = x.iter().map(Scalar::value).collect();
    let pv: Vec<f64> = p.iter().map(Scalar::value).collect();
    let (l, ms) = (prob.l, singular_set.len());

    let mut u = guess_u.to_vec();
    let mut vfull = fixed_v.to_vec();
    for (k, &idx) in singular_set.iter().enumerate() {
        vfull[idx] = guess_v.get(k).copied().unwrap_or(0.0);
    }

    let joint_residual = |u: &[f64], vfull: &[f64]| -> Result<f64> {
        let mut r: f64 = 0.0;
        if l > 0 {
            let hu = h_u(prob, &xv, u, vfull, &pv)?;
            r = r.max(linalg::norm_inf(&hu));
        }
        if ms > 0 {
            let hdd = hv_ddot(prob, &xv, u, vfull, &pv)?;
            for &idx in singular_set {
                r = r.max(hdd[idx].abs());
            }
        }
        Ok(r)
    };

    let mut prev = f64::INFINITY;
    let mut converged = l == 0 && ms == 0;
    let mut last_residual = 0.0;
    for _iter in 0..FEEDBACK_MAX_ITER {
        if l == 0 && ms == 0 {
            break;
        }
        // inner Newton for u given v
        if l > 0 {
            for _inner in 0..30 {
                let hu = h_u(prob, &xv, &u, &vfull, &pv)?;
                if linalg::norm_inf(&hu) <= 0.25 * FEEDBACK_TOL {
                    break;
                }
                let huu = h_uu(prob, &xv, &u, &vfull, &pv)?;
                check_slc_part_one(&huu, DEFAULT_SLC_TOL)?;
                let rhs: Vec<f64> = hu.iter().map(|h| -h).collect();
                let du = linalg::solve_small(&huu, &rhs)?;
                // damped update
                let base = linalg::norm_inf(&hu);
                let mut t = 1.0;
                let mut accepted = false;
                for _h in 0..20 {
                    let utry: Vec<f64> = u.iter().zip(&du).map(|(ui, d)| ui + t * d).collect();
                    if let Ok(hu_try) = h_u(prob, &xv, &utry, &vfull, &pv) {
                        if linalg::norm_inf(&hu_try) < base {
                            u = utry;
                            accepted = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
        }
        // affine solve for the singular components given u
        if ms > 0 {
            let vs = singular_v(prob, &xv, &u, &pv, singular_set, &vfull)?;
            for (k, &idx) in singular_set.iter().enumerate() {
                vfull[idx] = vs[k];
            }
        }
        let r = joint_residual(&u, &vfull)?;
        last_residual = r;
        if r <= FEEDBACK_TOL {
            converged = true;
            break;
        }
        if r >= prev && prev.is_finite() {
            // no further progress; accept only if already small
            converged = r <= 1e-9;
            break;
        }
        prev = r;
    }
    if !converged {
        return Err(Error::NoConvergence {
            iters: FEEDBACK_MAX_ITER,
            residual: last_residual,
        });
    }

    let vs_primal: Vec<f64> = singular_set.iter().map(|&i| vfull[i]).collect();
    if !s_tracks_derivatives::<S>() || (l == 0 && ms == 0) {
        let us = u.iter().map(|&c| S::from_f64(c)).collect();
        let vs = vs_primal.iter().map(|&c| S::from_f64(c)).collect();
        return Ok((us, vs));
    }

    // implicit-function lift: K = -J^{-1} dF/d(x,p) where F = (H_u; Hddot_v)
    let n = prob.n;
    let q = l + ms;
    let joint: Vec<f64> = u
        .iter()
        .chain(vs_primal.iter())
        .chain(xv.iter())
        .chain(pv.iter())
        .copied()
        .collect();
    let (_, rows) = autodiff::jacobian_rows(
        |w: &[Dual<f64>]| {
            let (uw, rest) = w.split_at(l);
            let (vw, rest) = rest.split_at(ms);
            let (xw, pw) = rest.split_at(n);
            let mut vfull_w: Vec<Dual<f64>> = fixed_v.iter().map(|&c| Dual::from_f64(c)).collect();
            for (k, &idx) in singular_set.iter().enumerate() {
                vfull_w[idx] = vw[k].clone();
            }
            let mut out = Vec::with_capacity(q);
            if l > 0 {
                out.extend(h_u(prob, xw, uw, &vfull_w, pw)?);
            }
            if ms > 0 {
                let hdd = hv_ddot(prob, xw, uw, &vfull_w, pw)?;
                for &idx in singular_set {
                    out.push(hdd[idx].clone());
                }
            }
            Ok(out)
        },
        &joint,
    )?;
    // split the q x (q + 2n) Jacobian
    let mut j_uv = vec![vec![0.0; q]; q];
    let mut j_xp = vec![vec![0.0; 2 * n]; q];
    for i in 0..q {
        for c in 0..q {
            j_uv[i][c] = rows[i][c];
        }
        for c in 0..2 * n {
            j_xp[i][c] = rows[i][q + c];
        }
    }
    // sensitivity K: q x 2n, column-by-column solve
    let mut k_cols: Vec<Vec<f64>> = Vec::with_capacity(2 * n);
    for c in 0..2 * n {
        let rhs: Vec<f64> = (0..q).map(|i| -j_xp[i][c]).collect();
        k_cols.push(linalg::solve_small(&j_uv, &rhs)?);
    }
    // assemble S-valued outputs: primal value + K . d(x,p)
    let z: Vec<S> = x.iter().chain(p.iter()).cloned().collect();
    let mut out_uv: Vec<S> = Vec::with_capacity(q);
    for i in 0..q {
        let primal = if i < l { u[i] } else { vs_primal[i - l] };
        let mut s = S::from_f64(primal);
        for (c, zc) in z.iter().enumerate() {
            let coeff = k_cols[c][i];
            if coeff != 0.0 {
                let dz = zc.clone() - S::from_f64(zc.value());
                s = s + S::from_f64(coeff) * dz;
            }
        }
        out_uv.push(s);
    }
    let vs_out = out_uv.split_off(l);
    Ok((out_uv, vs_out))
}

/// True when the scalar type carries derivative information (dual numbers);
/// plain `f64` is exactly eight bytes, every dual type is wider.
fn s_tracks_derivatives<S: Scalar>() -> bool {
    core::mem::size_of::<S>() != core::mem::size_of::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{build_lq, build_sirs, SirsParams};

    #[test]
    fn bracket_antisymmetry_and_self() {
        let prob = build_sirs(SirsParams::default()).unwrap();
        let x = [4800.0, 3000.0, 250.0, 10.0];
        let u = [0.1];
        for i in 0..=1 {
            let b = lie_bracket(&prob, i, i, &x, &u).unwrap();
            assert!(b.iter().all(|v| *v == 0.0));
        }
        let b01 = lie_bracket(&prob, 0, 1, &x, &u).unwrap();
        let b10 = lie_bracket(&prob, 1, 0, &x, &u).unwrap();
        for k in 0..4 {
            assert_eq!(b01[k], -b10[k]);
        }
    }

    #[test]
    fn linear_fields_bracket_is_commutator() {
        // g = A x, h = B x  ->  [g, h] = (BA - AB) x
        struct LinPair;
        const A: [[f64; 2]; 2] = [[0.0, 1.0], [-0.5, 0.3]];
        const B: [[f64; 2]; 2] = [[0.2, 0.0], [1.0, -0.7]];
        impl ProblemFunctions for LinPair {
            fn field<S: Scalar>(&self, i: usize, x: &[S], _u: &[S]) -> alloc::vec::Vec<S> {
                let m = if i == 0 { &A } else { &B };
                (0..2)
                    .map(|r| {
                        S::from_f64(m[r][0]) * x[0].clone() + S::from_f64(m[r][1]) * x[1].clone()
                    })
                    .collect()
            }
            fn cost<S: Scalar>(&self, _x0: &[S], _xt: &[S]) -> S {
                S::zero()
            }
            fn constraints<S: Scalar>(&self, _x0: &[S], _xt: &[S]) -> alloc::vec::Vec<S> {
                alloc::vec::Vec::new()
            }
        }
        let prob = ProblemDef::new(LinPair, 2, 0, 1, 1.0, alloc::vec![], 0.0, alloc::vec![
            1.0, 1.0
        ])
        .unwrap();
        let x = [0.8, -1.3];
        let br = lie_bracket(&prob, 0, 1, &x, &[]).unwrap();
        for r in 0..2 {
            let mut want = 0.0;
            for c in 0..2 {
                let mut ba = 0.0;
                let mut ab = 0.0;
                for k in 0..2 {
                    ba += B[r][k] * A[k][c];
                    ab += A[r][k] * B[k][c];
                }
                want += (ba - ab) * x[c];
            }
            assert!((br[r] - want).abs() < 1e-13, "row {r}");
        }
    }

    #[test]
    fn sirs_bracket_closed_form() {
        // [f0, f1] = (0, -(F(N) + omega (N - I)), beta S I / N, 0)
        let params = SirsParams::default();
        let prob = build_sirs(params.clone()).unwrap();
        let x = [4800.0, 3000.0, 250.0, 10.0];
        let u = [0.13];
        let b = lie_bracket(&prob, 0, 1, &x, &u).unwrap();
        let growth = params.alpha * x[0] * (1.0 - x[0] / params.k);
        let expect1 = -(growth + params.omega * (x[0] - x[2]));
        let expect2 = params.beta * x[1] * x[2] / x[0];
        assert!((b[0]).abs() < 1e-12);
        assert!((b[1] - expect1).abs() < 1e-9 * expect1.abs());
        assert!((b[2] - expect2).abs() < 1e-9 * expect2.abs());
        assert!((b[3]).abs() < 1e-12);
    }

    #[test]
    fn sirs_nested_bracket_identity() {
        // [f1,[f0,f1]] = -2 (0,0,beta S I/N,0) + [f0,f1]
        let prob = build_sirs(SirsParams::default()).unwrap();
        let x = [4800.0, 3000.0, 250.0, 10.0];
        let u = [0.13];
        let nb = nested_bracket(&prob, 1, 1, &x, &u).unwrap();
        let b01 = lie_bracket(&prob, 0, 1, &x, &u).unwrap();
        let s = 0.5 * x[1] * x[2] / x[0];
        let expect = [b01[0], b01[1], b01[2] - 2.0 * s, b01[3]];
        for k in 0..4 {
            assert!(
                (nb[k] - expect[k]).abs() <= 1e-9 * expect[k].abs().max(1.0),
                "component {k}"
            );
        }
    }

    #[test]
    fn nested_bracket_lq_constant() {
        // On the LQ model [f1,[f0,f1]] = (0,0,-2)
        let prob = build_lq().unwrap();
        let x = [0.7, -0.3, 0.1];
        let u = [0.4];
        let nb = nested_bracket(&prob, 1, 1, &x, &u).unwrap();
        assert!((nb[0]).abs() < 1e-14);
        assert!((nb[1]).abs() < 1e-14);
        assert!((nb[2] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn nested_bracket_matches_finite_difference() {
        let prob = build_sirs(SirsParams::default()).unwrap();
        let x = [4800.0, 3000.0, 250.0, 10.0];
        let u = [0.13];
        let nb = nested_bracket(&prob, 0, 1, &x, &u).unwrap();
        // finite-difference construction: d/dx [f0,f1] . f0 - Dx f0 . [f0,f1]
        let g = |x: &[f64]| lie_bracket(&prob, 0, 1, x, &u).unwrap();
        let f0 = prob.funcs.field::<f64>(0, &x, &u);
        let mut dg = [[0.0; 4]; 4];
        for j in 0..4 {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x;
            xp[j] += h;
            let mut xm = x;
            xm[j] -= h;
            let gp = g(&xp);
            let gm = g(&xm);
            for k in 0..4 {
                dg[k][j] = (gp[k] - gm[k]) / (2.0 * h);
            }
        }
        let (_, df0) = autodiff::jacobian_rows(
            |xd| {
                let ud = autodiff::lift(&u);
                Ok(prob.funcs.field(0, xd, &ud))
            },
            &x,
        )
        .unwrap();
        let gval = g(&x);
        for k in 0..4 {
            let mut want = 0.0;
            for s in 0..4 {
                want += dg[k][s] * f0[s] - df0[k][s] * gval[s];
            }
            assert!(
                (nb[k] - want).abs() <= 1e-5 * want.abs().max(1.0),
                "component {k}: {} vs {}",
                nb[k],
                want
            );
        }
    }

    #[test]
    fn hv_dot_zero_costate() {
        let prob = build_sirs(SirsParams::default()).unwrap();
        let hd = hv_dot(&prob, &[4800.0, 3000.0, 250.0, 10.0], &[0.1], &[0.0; 4]).unwrap();
        assert_eq!(hd[0], 0.0);
    }

    #[test]
    fn lq_u_dot_matches_hand_form() {
        // u = -p1/(2 p3) so udot = -p1dot/(2 p3) with p3 constant;
        // p1dot = -2 x1 p3 gives udot = x1.
        let prob = build_lq().unwrap();
        let x = [0.45, 0.2, 0.3];
        let p3 = 1.0;
        let u = [0.1];
        let p = [-2.0 * u[0] * p3, -0.6, p3]; // stationarity H_u = 0
        let ud = u_dot_feedback(&prob, &x, &u, &[0.2], &p).unwrap();
        assert!((ud[0] - x[0]).abs() < 1e-11, "{} vs {}", ud[0], x[0]);
    }

    #[test]
    fn slc_violation_detected() {
        // negative p3 flips the sign of H_uu = 2 p3
        let prob = build_lq().unwrap();
        let err = u_dot_feedback(&prob, &[0.0, 0.0, 0.0], &[0.0], &[0.1], &[0.0, 0.0, -1.0]);
        assert!(matches!(err, Err(Error::SlcViolation { .. })));
    }

    #[test]
    fn poisson_antisymmetry_and_canonical_pair() {
        struct Coord(usize);
        impl PhaseFunction for Coord {
            fn eval<S: Scalar>(&self, x: &[S], _p: &[S]) -> S {
                x[self.0].clone()
            }
        }
        struct Mom(usize);
        impl PhaseFunction for Mom {
            fn eval<S: Scalar>(&self, _x: &[S], p: &[S]) -> S {
                p[self.0].clone()
            }
        }
        let x = [0.3, -0.7];
        let p = [1.2, 0.4];
        let gg = poisson_bracket(&Coord(0), &Coord(0), &x, &p).unwrap();
        assert_eq!(gg, 0.0);
        let c = poisson_bracket(&Coord(0), &Mom(0), &x, &p).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
        let c10 = poisson_bracket(&Mom(0), &Coord(0), &x, &p).unwrap();
        assert!((c10 + 1.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_sirs_matches_closed_form() {
        // gamma_11 = p.[f1,[f0,f1]]; on the singular manifold (Hdot_v = 0)
        // this equals -2 beta S I p_I / N. Build a p satisfying
        // Hv = Hdot_v = 0 and compare.
        let params = SirsParams::default();
        let prob = build_sirs(params.clone()).unwrap();
        let x = [4800.0, 1200.0, 40.0, 10.0];
        let p_c = 1.0;
        let p_s = params.b2 * p_c / x[1]; // Hv = -p_S S + B2 p_C = 0
        let growth = params.alpha * x[0] * (1.0 - x[0] / params.k);
        let p_i =
            p_s * (growth + params.omega * (x[0] - x[2])) * x[0] / (params.beta * x[1] * x[2]); // Hdot_v = 0
        let p = [0.0, p_s, p_i, p_c];
        let u = [p_i * x[2] / (2.0 * params.b3 * p_c)];
        let gs = gamma_system(&prob, &x, &u, &[0.0], &p, &[0]).unwrap();
        let expect = -2.0 * params.beta * x[1] * x[2] * p_i / x[0];
        assert!(
            (gs.gamma[(0, 0)] - expect).abs() <= 1e-8 * expect.abs(),
            "{} vs {}",
            gs.gamma[(0, 0)],
            expect
        );
        // margins: -Gamma = 2 beta S I p_I / N > 0 iff p_I > 0
        let (m1, m2) = slc_margins(&prob, &x, &u, &[0.0], &p, &[0]).unwrap();
        assert!(m1 > 0.0 && m2 > 0.0);
        assert!((m2 + gs.gamma[(0, 0)]).abs() <= 1e-10 * m2.abs().max(1.0));
    }

    #[test]
    fn gamma_matches_v_derivative_of_hvddot() {
        // Gamma = d Hddot_v / d v by construction; cross-check by finite
        // differences in v on the SIRS model.
        let params = SirsParams::default();
        let prob = build_sirs(params.clone()).unwrap();
        let x = [4800.0, 1200.0, 40.0, 10.0];
        let p = [0.02, 0.05, 3.0, 1.0];
        let u = [0.06];
        let gs = gamma_system(&prob, &x, &u, &[0.1], &p, &[0]).unwrap();
        let h = 1e-5;
        let hp = hv_ddot(&prob, &x, &u, &[0.1 + h], &p).unwrap();
        let hm = hv_ddot(&prob, &x, &u, &[0.1 - h], &p).unwrap();
        let fd = (hp[0] - hm[0]) / (2.0 * h);
        assert!(
            (gs.gamma[(0, 0)] - fd).abs() <= 1e-4 * fd.abs().max(1.0),
            "{} vs {}",
            gs.gamma[(0, 0)],
            fd
        );
        // and Hddot_v is affine in v: gamma0 + Gamma v reproduces it
        let hdd = hv_ddot(&prob, &x, &u, &[0.1], &p).unwrap();
        let affine = gs.gamma0[0] + gs.gamma[(0, 0)] * 0.1;
        assert!((hdd[0] - affine).abs() <= 1e-9 * hdd[0].abs().max(1.0));
    }

    #[test]
    fn singular_v_solves_the_system() {
        let params = SirsParams::default();
        let prob = build_sirs(params.clone()).unwrap();
        let x = [4800.0, 1200.0, 40.0, 10.0];
        let p_c = 1.0;
        let p_s = params.b2 * p_c / x[1];
        let growth = params.alpha * x[0] * (1.0 - x[0] / params.k);
        let p_i =
            p_s * (growth + params.omega * (x[0] - x[2])) * x[0] / (params.beta * x[1] * x[2]);
        let p = [0.0, p_s, p_i, p_c];
        let u = [p_i * x[2] / (2.0 * params.b3 * p_c)];
        let v = singular_v(&prob, &x, &u, &p, &[0], &[0.0]).unwrap();
        let hdd = hv_ddot(&prob, &x, &u, &[v[0]], &p).unwrap();
        assert!(hdd[0].abs() <= 1e-10 * (1.0 + v[0].abs()));
    }

    #[test]
    fn feedback_lq_single_inner_step() {
        // H quadratic in u: stationarity u = -p1/(2 p3) reached immediately
        let prob = build_lq().unwrap();
        let x = [0.3, 0.15, 0.0];
        let p = [-0.3, -1.5, 1.0];
        let (u, v) = feedback_controls(&prob, &x, &p, &[0.0], &[0.2], &[0], &[0.0]).unwrap();
        assert!((u[0] - (-p[0] / (2.0 * p[2]))).abs() < 1e-12);
        // singular v on LQ equals x1
        assert!((v[0] - x[0]).abs() < 1e-10, "{} vs {}", v[0], x[0]);
        // residuals at the output
        let hu = h_u(&prob, &x, &[u[0]], &[v[0]], &p).unwrap();
        let hdd = hv_ddot(&prob, &x, &[u[0]], &[v[0]], &p).unwrap();
        assert!(hu[0].abs() <= 1e-10);
        assert!(hdd[0].abs() <= 1e-10);
    }

    #[test]
    fn feedback_passes_bang_values_through() {
        let prob = build_lq().unwrap();
        let x = [0.3, 0.15, 0.0];
        let p = [-0.3, -1.5, 1.0];
        let (_, v) = feedback_controls(&prob, &x, &p, &[0.0], &[], &[], &[0.5]).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn feedback_ift_matches_finite_difference() {
        // derivative of the feedback map w.r.t. x via the dual lift vs FD
        let prob = build_lq().unwrap();
        let p = [-0.3, -1.5, 1.0];
        let x = [0.3, 0.15, 0.0];
        let eps = 1e-7;
        for comp in 0..3 {
            let seeded: Vec<Dual<f64>> = x
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    if k == comp {
                        Dual::variable(v, 0, 1)
                    } else {
                        Dual::constant(v)
                    }
                })
                .collect();
            let pd: Vec<Dual<f64>> = p.iter().map(|&v| Dual::constant(v)).collect();
            let (u, v) =
                feedback_controls(&prob, &seeded, &pd, &[0.0], &[0.2], &[0], &[0.0]).unwrap();
            let mut xp = x;
            xp[comp] += eps;
            let mut xm = x;
            xm[comp] -= eps;
            let (up, vp) =
                feedback_controls::<f64, _>(&prob, &xp, &p, &[0.0], &[0.2], &[0], &[0.0]).unwrap();
            let (um, vm) =
                feedback_controls::<f64, _>(&prob, &xm, &p, &[0.0], &[0.2], &[0], &[0.0]).unwrap();
            let du_fd = (up[0] - um[0]) / (2.0 * eps);
            let dv_fd = (vp[0] - vm[0]) / (2.0 * eps);
            assert!(
                (u[0].d.first().copied().unwrap_or(0.0) - du_fd).abs() < 1e-6,
                "du/dx{comp}"
            );
            assert!(
                (v[0].d.first().copied().unwrap_or(0.0) - dv_fd).abs() < 1e-6,
                "dv/dx{comp}"
            );
        }
    }
}

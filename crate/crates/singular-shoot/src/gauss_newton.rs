//! Gauss-Newton driver for overdetermined nonlinear least squares, with
//! Armijo damping and a convergence-order diagnostic.

use crate::linalg::{self, Matrix};
use crate::{Error, Result};
use alloc::vec::Vec;

/// Step damping strategy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Damping {
    /// Pure Gauss-Newton steps; exhibits the local quadratic rate.
    None,
    /// Armijo backtracking on `|S|^2` with sufficient-decrease constant `c`.
    Armijo { c: f64, max_halvings: usize },
}

impl Default for Damping {
    fn default() -> Self {
        Damping::Armijo {
            c: 1e-4,
            max_halvings: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GnOptions {
    pub max_iter: usize,
    /// Stop when the residual infinity norm falls below this.
    pub tol_residual: f64,
    /// Stop when the step two-norm falls below this.
    pub tol_step: f64,
    pub damping: Damping,
    /// Rank tolerance forwarded to the pivoted-QR least-squares solve.
    pub rank_rtol: f64,
}

impl Default for GnOptions {
    fn default() -> Self {
        GnOptions {
            max_iter: 100,
            tol_residual: 1e-10,
            tol_step: 1e-12,
            damping: Damping::default(),
            rank_rtol: linalg::DEFAULT_RANK_RTOL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnStatus {
    Converged,
    MaxIter,
    SingularJacobian,
    LineSearchFail,
}

/// Iteration record of a Gauss-Newton run.
#[derive(Clone, Debug)]
pub struct GnReport {
    pub iterates: Vec<Vec<f64>>,
    pub residual_norms: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub status: GnStatus,
    /// Convergence-order estimate from the residual history, when there is
    /// enough of it.
    pub order_estimate: Option<f64>,
}

/// Solve `argmin |S(nu)|^2` by Gauss-Newton: each step solves the linear
/// least-squares problem `min |S(nu) + S'(nu) d|` and updates `nu += d`
/// (optionally damped). Returns the final iterate and the iteration record.
pub fn gn_solve<R, J>(
    mut residual_fn: R,
    mut jacobian_fn: J,
    nu0: &[f64],
    opts: &GnOptions,
) -> Result<(Vec<f64>, GnReport)>
where
    R: FnMut(&[f64]) -> Result<Vec<f64>>,
    J: FnMut(&[f64]) -> Result<Matrix>,
{
    let mut nu = nu0.to_vec();
    let mut report = GnReport {
        iterates: alloc::vec![nu.clone()],
        residual_norms: Vec::new(),
        step_norms: Vec::new(),
        status: GnStatus::MaxIter,
        order_estimate: None,
    };
    let mut r = residual_fn(&nu)?;
    report.residual_norms.push(linalg::norm_inf(&r));

    for _iter in 0..opts.max_iter {
        if linalg::norm_inf(&r) <= opts.tol_residual {
            report.status = GnStatus::Converged;
            break;
        }
        let jac = jacobian_fn(&nu)?;
        if jac.rows() != r.len() || jac.cols() != nu.len() {
            return Err(Error::Dimension("jacobian shape vs residual/unknowns".into()));
        }
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = match linalg::solve_least_squares_rtol(&jac, &neg_r, opts.rank_rtol) {
            Ok(s) => s,
            Err(Error::RankDeficient { .. }) => {
                report.status = GnStatus::SingularJacobian;
                break;
            }
            Err(e) => return Err(e),
        };
        let step_norm = linalg::norm2(&step);

        let (next_nu, next_r) = match opts.damping {
            Damping::None => {
                let cand: Vec<f64> = nu.iter().zip(&step).map(|(a, b)| a + b).collect();
                let rr = residual_fn(&cand)?;
                (cand, rr)
            }
            Damping::Armijo { c, max_halvings } => {
                // phi = 0.5 |S|^2; along the GN step, grad(phi).d = -|J d|^2
                let phi0 = 0.5 * linalg::dot(&r, &r);
                let jd = jac.matvec(&step);
                let slope = -linalg::dot(&jd, &jd);
                let mut t = 1.0;
                let mut accepted = None;
                for _h in 0..=max_halvings {
                    let cand: Vec<f64> =
                        nu.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                    match residual_fn(&cand) {
                        Ok(rr) => {
                            let phi = 0.5 * linalg::dot(&rr, &rr);
                            if phi <= phi0 + c * t * slope {
                                accepted = Some((cand, rr, t));
                                break;
                            }
                        }
                        Err(_) => {} // reject trial points outside the domain
                    }
                    t *= 0.5;
                }
                match accepted {
                    Some((cand, rr, t)) => {
                        report.step_norms.push(t * step_norm);
                        nu = cand;
                        r = rr;
                        report.iterates.push(nu.clone());
                        report.residual_norms.push(linalg::norm_inf(&r));
                        if t * step_norm <= opts.tol_step {
                            report.status = GnStatus::Converged;
                            break;
                        }
                        continue;
                    }
                    None => {
                        report.status = GnStatus::LineSearchFail;
                        break;
                    }
                }
            }
        };
        report.step_norms.push(step_norm);
        nu = next_nu;
        r = next_r;
        report.iterates.push(nu.clone());
        report.residual_norms.push(linalg::norm_inf(&r));
        if step_norm <= opts.tol_step {
            report.status = GnStatus::Converged;
            break;
        }
    }
    if report.status == GnStatus::MaxIter && linalg::norm_inf(&r) <= opts.tol_residual {
        report.status = GnStatus::Converged;
    }
    // A run that hits the root exactly leaves fewer than four positive
    // errors below the cut, so the report uses the lenient fit.
    report.order_estimate = fit_order(&report.residual_norms, 1);
    Ok((nu, report))
}

/// Convergence-order estimate: least-squares slope of `log e_{k+1}` against
/// `log e_k` over the final window of a positive decreasing error sequence.
///
/// Requires at least four entries below `1e-2`; entries at the rounding
/// floor are excluded from the fit.
pub fn order_estimate(errors: &[f64]) -> Result<f64> {
    let small = errors
        .iter()
        .filter(|&&e| e > 0.0 && e < 1e-2)
        .count();
    if small < 4 {
        return Err(Error::InsufficientData);
    }
    fit_order(errors, 1).ok_or(Error::InsufficientData)
}

/// Least-squares slope of `log e_{k+1}` vs `log e_k` over the final window,
/// skipping pairs contaminated by the floating-point floor. Returns `None`
/// when fewer than `min_pairs` clean pairs exist.
fn fit_order(errors: &[f64], min_pairs: usize) -> Option<f64> {
    let small: Vec<f64> = errors
        .iter()
        .copied()
        .filter(|&e| e > 0.0 && e < 1e-2)
        .collect();
    let floor = 100.0 * f64::EPSILON;
    let window = &small[small.len().saturating_sub(6)..];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for w in window.windows(2) {
        if w[0] <= floor || w[1] <= floor || w[1] >= w[0] {
            continue;
        }
        xs.push(libm::log(w[0]));
        ys.push(libm::log(w[1]));
    }
    if xs.is_empty() || xs.len() < min_pairs {
        return None;
    }
    if xs.len() == 1 {
        return Some(ys[0] / xs[0]);
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|v| v * v).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

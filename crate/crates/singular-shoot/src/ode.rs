//! Fixed-step RK4 integration of the coupled state-costate system with the
//! controls in feedback form, plus the low-level integrator used by the
//! direct-transcription oracle and the order tests.

use crate::lie;
use crate::model::{Extremal, ProblemDef, ProblemFunctions};
use crate::scalar::Scalar;
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// Classic RK4 on a generic right-hand side. Returns all nodes including the
/// initial one; supports decreasing spans (backward integration).
pub fn rk4<S, F>(
    mut rhs: F,
    y0: &[S],
    t_span: (f64, f64),
    steps: usize,
) -> Result<Vec<(f64, Vec<S>)>>
where
    S: Scalar,
    F: FnMut(f64, &[S]) -> Result<Vec<S>>,
{
    if steps < 4 {
        return Err(Error::StepsTooFew(steps));
    }
    let (t0, t1) = t_span;
    let h = (t1 - t0) / steps as f64;
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push((t, y.clone()));
    for k in 0..steps {
        let half = 0.5 * h;
        let k1 = rhs(t, &y).map_err(|e| e.at_time(t))?;
        let y2 = add_scaled(&y, &k1, half);
        let k2 = rhs(t + half, &y2).map_err(|e| e.at_time(t + half))?;
        let y3 = add_scaled(&y, &k2, half);
        let k3 = rhs(t + half, &y3).map_err(|e| e.at_time(t + half))?;
        let y4 = add_scaled(&y, &k3, h);
        let k4 = rhs(t + h, &y4).map_err(|e| e.at_time(t + h))?;
        for i in 0..y.len() {
            let incr = k1[i].clone()
                + S::from_f64(2.0) * k2[i].clone()
                + S::from_f64(2.0) * k3[i].clone()
                + k4[i].clone();
            y[i] = y[i].clone() + S::from_f64(h / 6.0) * incr;
        }
        t = t0 + (k + 1) as f64 * h;
        out.push((t, y.clone()));
    }
    Ok(out)
}

fn add_scaled<S: Scalar>(y: &[S], k: &[S], c: f64) -> Vec<S> {
    y.iter()
        .zip(k)
        .map(|(yi, ki)| yi.clone() + S::from_f64(c) * ki.clone())
        .collect()
}

/// Step-doubling error indicator: infinity-norm gap between the endpoint at
/// `steps` and at `2*steps`. Diagnostic only.
pub fn step_doubling_error<F>(
    mut rhs: F,
    y0: &[f64],
    t_span: (f64, f64),
    steps: usize,
) -> Result<f64>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let coarse = rk4(&mut rhs, y0, t_span, steps)?;
    let fine = rk4(&mut rhs, y0, t_span, 2 * steps)?;
    let yc = &coarse.last().unwrap().1;
    let yf = &fine.last().unwrap().1;
    Ok(yc
        .iter()
        .zip(yf)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
}

/// One phase of the extremal flow: controls eliminated in feedback form,
/// non-singular affine components frozen at `fixed_v`, dynamics scaled by
/// the phase duration (for transformed-problem phases on `[0, 1]`).
#[derive(Clone, Debug)]
pub struct HamiltonianFlow<'a, P> {
    pub prob: &'a ProblemDef<P>,
    pub singular_set: Vec<usize>,
    /// Frozen values per affine component; singular slots are ignored.
    pub fixed_v: Vec<f64>,
    /// Duration factor multiplying the vector fields (`T_k - T_{k-1}`), or 1.
    pub scale: f64,
    /// Feedback guesses used at the start of the phase.
    pub u_guess: Vec<f64>,
    pub v_guess: Vec<f64>,
    /// Width of the integration guard that clamps runaway singular controls,
    /// in units of the bound range; inactive on converged interior arcs.
    pub guard_factor: f64,
}

impl<'a, P: ProblemFunctions> HamiltonianFlow<'a, P> {
    pub fn new(
        prob: &'a ProblemDef<P>,
        singular_set: Vec<usize>,
        fixed_v: Vec<f64>,
        scale: f64,
    ) -> Result<Self> {
        if fixed_v.len() != prob.m {
            return Err(Error::Dimension(
                "fixed_v must have one entry per affine control".into(),
            ));
        }
        if !prob.v_bounds.is_empty() {
            for i in 0..prob.m {
                if singular_set.contains(&i) {
                    continue;
                }
                let (lo, hi) = prob.v_bounds[i];
                let on_bound = (fixed_v[i] - lo).abs() <= 1e-12 * (1.0 + hi - lo)
                    || (fixed_v[i] - hi).abs() <= 1e-12 * (1.0 + hi - lo);
                if !on_bound {
                    return Err(Error::InvalidParams(alloc::format!(
                        "bang value {} for component {i} not on a declared bound",
                        fixed_v[i]
                    )));
                }
            }
        }
        Ok(HamiltonianFlow {
            prob,
            singular_set,
            fixed_v,
            scale,
            u_guess: vec![0.0; prob.l],
            v_guess: vec![0.0; prob.m],
            guard_factor: 1.0,
        })
    }

    pub fn with_guesses(mut self, u: Vec<f64>, v: Vec<f64>) -> Self {
        self.u_guess = u;
        self.v_guess = v;
        self
    }

    fn guard<S: Scalar>(&self, idx: usize, v: S) -> S {
        if self.prob.v_bounds.is_empty() || self.guard_factor <= 0.0 {
            return v;
        }
        let (lo, hi) = self.prob.v_bounds[idx];
        let w = self.guard_factor * (hi - lo);
        let val = v.value();
        if val < lo - w {
            S::from_f64(lo - w)
        } else if val > hi + w {
            S::from_f64(hi + w)
        } else {
            v
        }
    }
}

/// One integrated phase: nodes with time, state, costate and full controls.
#[derive(Clone, Debug)]
pub struct Segment<S> {
    pub ts: Vec<f64>,
    pub x: Vec<Vec<S>>,
    pub p: Vec<Vec<S>>,
    pub u: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> Segment<S> {
    pub fn values(&self) -> Segment<f64> {
        let val = |m: &Vec<Vec<S>>| -> Vec<Vec<f64>> {
            m.iter()
                .map(|r| r.iter().map(Scalar::value).collect())
                .collect()
        };
        Segment {
            ts: self.ts.clone(),
            x: val(&self.x),
            p: val(&self.p),
            u: val(&self.u),
            v: val(&self.v),
        }
    }
}

/// Integrate the state-costate system over `t_span` with `steps` RK4 steps.
/// Controls are recomputed in feedback form at every stage point, with the
/// feedback Newton warm-started from the previous evaluation.
///
/// The output is first-order differentiable in `(x0, p0)` when called on
/// dual numbers (the feedback map is lifted through the implicit function
/// theorem at each stage).
pub fn integrate<S: Scalar, P: ProblemFunctions>(
    flow: &HamiltonianFlow<'_, P>,
    x0: &[S],
    p0: &[S],
    t_span: (f64, f64),
    steps: usize,
) -> Result<Segment<S>> {
    integrate_scaled(flow, x0, p0, S::from_f64(flow.scale), t_span, steps)
}

/// [`integrate`] with a scalar-typed duration factor, so sensitivities with
/// respect to phase durations (the transformed problem's switching times)
/// propagate through dual numbers.
pub fn integrate_scaled<S: Scalar, P: ProblemFunctions>(
    flow: &HamiltonianFlow<'_, P>,
    x0: &[S],
    p0: &[S],
    scale: S,
    t_span: (f64, f64),
    steps: usize,
) -> Result<Segment<S>> {
    if steps < 4 {
        return Err(Error::StepsTooFew(steps));
    }
    let prob = flow.prob;
    let n = prob.n;
    let mut warm_u = flow.u_guess.clone();
    let mut warm_v = flow.v_guess.clone();

    // feedback + scaled dynamics at a point, updating the warm start
    let mut eval = |x: &[S],
                    p: &[S],
                    warm_u: &mut Vec<f64>,
                    warm_v: &mut Vec<f64>|
     -> Result<(Vec<S>, Vec<S>, Vec<S>, Vec<S>)> {
        let (u, vs) = lie::feedback_controls(
            prob,
            x,
            p,
            warm_u,
            warm_v,
            &flow.singular_set,
            &flow.fixed_v,
        )?;
        *warm_u = u.iter().map(Scalar::value).collect();
        *warm_v = vs.iter().map(Scalar::value).collect();
        let mut vfull: Vec<S> = flow.fixed_v.iter().map(|&c| S::from_f64(c)).collect();
        for (k, &idx) in flow.singular_set.iter().enumerate() {
            vfull[idx] = flow.guard(idx, vs[k].clone());
        }
        let dx = prob.dynamics(x, &u, &vfull)?;
        let dp = prob.costate_rhs(x, &u, &vfull, p)?;
        let dx: Vec<S> = dx.into_iter().map(|d| scale.clone() * d).collect();
        let dp: Vec<S> = dp.into_iter().map(|d| scale.clone() * d).collect();
        Ok((u, vfull, dx, dp))
    };

    let (t0, t1) = t_span;
    let h = (t1 - t0) / steps as f64;
    let mut x = x0.to_vec();
    let mut p = p0.to_vec();
    let mut seg = Segment {
        ts: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        p: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        v: Vec::with_capacity(steps + 1),
    };
    for k in 0..=steps {
        let t = t0 + k as f64 * h;
        let (u, vfull, dx1, dp1) =
            eval(&x, &p, &mut warm_u, &mut warm_v).map_err(|e| e.at_time(t))?;
        seg.ts.push(t);
        seg.x.push(x.clone());
        seg.p.push(p.clone());
        seg.u.push(u);
        seg.v.push(vfull);
        if k == steps {
            break;
        }
        let half = 0.5 * h;
        let x2 = add_scaled(&x, &dx1, half);
        let p2 = add_scaled(&p, &dp1, half);
        let (_, _, dx2, dp2) =
            eval(&x2, &p2, &mut warm_u, &mut warm_v).map_err(|e| e.at_time(t + half))?;
        let x3 = add_scaled(&x, &dx2, half);
        let p3 = add_scaled(&p, &dp2, half);
        let (_, _, dx3, dp3) =
            eval(&x3, &p3, &mut warm_u, &mut warm_v).map_err(|e| e.at_time(t + half))?;
        let x4 = add_scaled(&x, &dx3, h);
        let p4 = add_scaled(&p, &dp3, h);
        let (_, _, dx4, dp4) =
            eval(&x4, &p4, &mut warm_u, &mut warm_v).map_err(|e| e.at_time(t + h))?;
        for i in 0..n {
            let ix = dx1[i].clone()
                + S::from_f64(2.0) * dx2[i].clone()
                + S::from_f64(2.0) * dx3[i].clone()
                + dx4[i].clone();
            x[i] = x[i].clone() + S::from_f64(h / 6.0) * ix;
            let ip = dp1[i].clone()
                + S::from_f64(2.0) * dp2[i].clone()
                + S::from_f64(2.0) * dp3[i].clone()
                + dp4[i].clone();
            p[i] = p[i].clone() + S::from_f64(h / 6.0) * ip;
        }
    }
    Ok(seg)
}

/// Maximum drift `|H(t) - H(0)|` of the pre-Hamiltonian over an extremal.
/// Purely diagnostic: non-extremal trajectories report their (large) drift.
pub fn hamiltonian_drift<P: ProblemFunctions>(
    prob: &ProblemDef<P>,
    extremal: &Extremal,
) -> Result<f64> {
    let h0 = prob.hamiltonian(
        &extremal.x[0],
        &extremal.u[0],
        &extremal.v[0],
        &extremal.p[0],
    )?;
    let mut drift = 0.0_f64;
    for k in 1..extremal.node_count() {
        let h = prob.hamiltonian(
            &extremal.x[k],
            &extremal.u[k],
            &extremal.v[k],
            &extremal.p[k],
        )?;
        drift = drift.max((h - h0).abs());
    }
    Ok(drift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::build_lq;

    #[test]
    fn too_few_steps_rejected() {
        let r = rk4(|_t, y: &[f64]| Ok(y.to_vec()), &[1.0], (0.0, 1.0), 3);
        assert!(matches!(r, Err(Error::StepsTooFew(3))));
    }

    #[test]
    fn constant_system_stays_constant() {
        let out = rk4(
            |_t, y: &[f64]| Ok(vec![0.0; y.len()]),
            &[2.0, -1.0],
            (0.0, 5.0),
            16,
        )
        .unwrap();
        let (_, last) = out.last().unwrap();
        assert_eq!(last, &vec![2.0, -1.0]);
    }

    #[test]
    fn exponential_matches_reference() {
        // x' = x, x(0) = 1: compare against a 10x-steps reference rather
        // than the closed form, per the step-halving oracle
        let run = |steps| {
            rk4(|_t, y: &[f64]| Ok(vec![y[0]]), &[1.0], (0.0, 1.0), steps)
                .unwrap()
                .last()
                .unwrap()
                .1[0]
        };
        let coarse = run(64);
        let reference = run(640);
        assert!((coarse - reference).abs() < 1e-8);
    }

    #[test]
    fn fourth_order_convergence() {
        // halving h divides the error by roughly 16 on three test systems
        type Rhs = fn(f64, &[f64]) -> crate::Result<Vec<f64>>;
        let systems: Vec<(Rhs, Vec<f64>)> = vec![
            (|_t, y: &[f64]| Ok(vec![y[0]]), vec![1.0]),
            (|_t, y: &[f64]| Ok(vec![y[1], -y[0]]), vec![1.0, 0.0]),
            (|t: f64, y: &[f64]| Ok(vec![t * y[0]]), vec![0.5]),
        ];
        for (rhs, y0) in systems {
            let endpoint = |steps: usize| {
                rk4(rhs, &y0, (0.0, 1.0), steps)
                    .unwrap()
                    .last()
                    .unwrap()
                    .1
                    .clone()
            };
            let reference = endpoint(2048);
            let err = |steps: usize| {
                endpoint(steps)
                    .iter()
                    .zip(&reference)
                    .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
            };
            let e1 = err(16);
            let e2 = err(32);
            let ratio = e1 / e2;
            assert!(
                (12.0..=20.0).contains(&ratio),
                "order ratio {ratio} outside [12, 20]"
            );
        }
    }

    #[test]
    fn flow_time_reversal() {
        let prob = build_lq().unwrap();
        let flow = HamiltonianFlow::new(&prob, vec![0], vec![0.0], 1.0).unwrap();
        let x0 = [0.2, 0.1, 0.0];
        let p0 = [-0.4, -1.1, 1.0];
        let fwd = integrate(&flow, &x0, &p0, (0.0, 0.5), 64).unwrap();
        let xt = fwd.x.last().unwrap().clone();
        let pt = fwd.p.last().unwrap().clone();
        let flow_back = HamiltonianFlow::new(&prob, vec![0], vec![0.0], 1.0)
            .unwrap()
            .with_guesses(
                fwd.u.last().unwrap().clone(),
                vec![fwd.v.last().unwrap()[0]],
            );
        let back = integrate(&flow_back, &xt, &pt, (0.5, 0.0), 64).unwrap();
        let xb = back.x.last().unwrap();
        let pb = back.p.last().unwrap();
        for i in 0..3 {
            assert!((xb[i] - x0[i]).abs() < 1e-7, "x{i}");
            assert!((pb[i] - p0[i]).abs() < 1e-7, "p{i}");
        }
    }

    #[test]
    fn bang_flow_freezes_v() {
        let prob = build_lq().unwrap();
        let flow = HamiltonianFlow::new(&prob, vec![], vec![0.5], 1.0).unwrap();
        let seg = integrate(&flow, &[0.0, 0.0, 0.0], &[-0.4, -1.1, 1.0], (0.0, 0.3), 8).unwrap();
        assert!(seg.v.iter().all(|v| v[0] == 0.5));
    }

    #[test]
    fn invalid_bang_value_rejected() {
        let prob = build_lq().unwrap();
        let r = HamiltonianFlow::new(&prob, vec![], vec![0.3], 1.0);
        assert!(matches!(r, Err(Error::InvalidParams(_))));
    }

    #[test]
    fn drift_of_zero_costate_is_zero() {
        let prob = build_lq().unwrap();
        let ex = Extremal {
            grid: vec![0.0, 1.0, 2.0],
            x: vec![vec![0.1, 0.2, 0.0]; 3],
            p: vec![vec![0.0, 0.0, 0.0]; 3],
            u: vec![vec![0.3]; 3],
            v: vec![vec![0.1]; 3],
            beta: vec![],
            phase: vec![0; 3],
            singular_sets: vec![vec![0]],
        };
        // p = 0 makes H identically zero along the nodes
        assert_eq!(hamiltonian_drift(&prob, &ex).unwrap(), 0.0);
    }

    #[test]
    fn drift_reports_nonzero_for_non_extremal() {
        let prob = build_lq().unwrap();
        let ex = Extremal {
            grid: vec![0.0, 1.0],
            x: vec![vec![0.1, 0.2, 0.0], vec![0.9, 0.1, 0.4]],
            p: vec![vec![1.0, 0.5, 1.0]; 2],
            u: vec![vec![0.3]; 2],
            v: vec![vec![0.1]; 2],
            beta: vec![],
            phase: vec![0; 2],
            singular_sets: vec![vec![0]],
        };
        assert!(hamiltonian_drift(&prob, &ex).unwrap() > 0.0);
    }
}

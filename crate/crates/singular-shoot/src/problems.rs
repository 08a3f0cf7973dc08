//! Built-in benchmark problems: a degenerate linear-quadratic problem with a
//! bang-singular-bang affine control, and an SIRS epidemic model with
//! quadratic treatment cost and linear vaccination cost.

use crate::model::{Extremal, ProblemDef, ProblemFunctions};
use crate::scalar::Scalar;
use crate::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// SIRS model parameters. Defaults are the benchmark values: logistic
/// recruitment `F(N) = alpha N (1 - N/K)`, incidence `beta I S / N`, waning
/// immunity `omega`, and cost weights `B1 I + B2 v + B3 u^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SirsParams {
    pub n0: f64,
    pub s0: f64,
    pub i0: f64,
    pub alpha: f64,
    pub k: f64,
    pub mu: f64,
    pub beta: f64,
    pub omega: f64,
    pub gamma: f64,
    pub delta: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub v_max: f64,
    pub horizon: f64,
}

impl Default for SirsParams {
    fn default() -> Self {
        SirsParams {
            n0: 5000.0,
            s0: 4500.0,
            i0: 499.0,
            alpha: 4e-5,
            k: 5000.0,
            mu: 1e-5,
            beta: 0.5,
            omega: 0.01,
            gamma: 0.1,
            delta: 0.1,
            b1: 1.0,
            b2: 50.0,
            b3: 1000.0,
            v_max: 0.25,
            horizon: 100.0,
        }
    }
}

impl SirsParams {
    fn validate(&self) -> Result<()> {
        let all = [
            self.n0, self.s0, self.i0, self.alpha, self.k, self.mu, self.beta, self.omega,
            self.gamma, self.delta, self.b1, self.b2, self.b3, self.v_max, self.horizon,
        ];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParams(
                "SIRS parameters must be positive".into(),
            ));
        }
        if self.s0 + self.i0 > self.n0 {
            return Err(Error::InvalidParams(format!(
                "S0 + I0 = {} exceeds N0 = {}",
                self.s0 + self.i0,
                self.n0
            )));
        }
        Ok(())
    }
}

/// SIRS dynamics with states `(N, S, I, C)`, treatment `u` (nonlinear) and
/// vaccination `v` (affine). `C` accumulates the running cost.
#[derive(Clone, Debug)]
pub struct SirsModel {
    pub params: SirsParams,
}

impl SirsModel {
    fn growth<S: Scalar>(&self, n: S) -> S {
        // F(N) = alpha N (1 - N/K)
        let p = &self.params;
        S::from_f64(p.alpha) * n.clone() * (S::one() - n / S::from_f64(p.k))
    }
}

impl ProblemFunctions for SirsModel {
    fn field<S: Scalar>(&self, i: usize, x: &[S], u: &[S]) -> Vec<S> {
        let p = &self.params;
        let (n, s, ii) = (x[0].clone(), x[1].clone(), x[2].clone());
        match i {
            0 => {
                let f = self.growth(n.clone());
                let incidence = S::from_f64(p.beta) * ii.clone() * s.clone() / n.clone();
                let r = n.clone() - s.clone() - ii.clone();
                vec![
                    f.clone() - S::from_f64(p.delta) * ii.clone() - S::from_f64(p.mu) * n,
                    f - incidence.clone() + S::from_f64(p.omega) * r - S::from_f64(p.mu) * s,
                    incidence
                        - (S::from_f64(p.gamma + p.delta + p.mu) + u[0].clone()) * ii.clone(),
                    S::from_f64(p.b1) * ii + S::from_f64(p.b3) * u[0].clone() * u[0].clone(),
                ]
            }
            1 => vec![S::zero(), -s, S::zero(), S::from_f64(p.b2)],
            _ => panic!("SIRS has a single affine field"),
        }
    }

    fn cost<S: Scalar>(&self, _x0: &[S], xt: &[S]) -> S {
        xt[3].clone()
    }

    fn constraints<S: Scalar>(&self, x0: &[S], _xt: &[S]) -> Vec<S> {
        let p = &self.params;
        vec![
            x0[0].clone() - S::from_f64(p.n0),
            x0[1].clone() - S::from_f64(p.s0),
            x0[2].clone() - S::from_f64(p.i0),
            x0[3].clone(),
        ]
    }
}

/// Build the SIRS optimal treatment-vaccination problem.
///
/// The non-negativity constraint on the treatment `u` is dropped: a negative
/// treatment is never optimal for this model, so the solved problem is
/// unconstrained in `u` and the sign is re-checked after the fact with
/// [`check_nonneg_treatment`].
pub fn build_sirs(params: SirsParams) -> Result<ProblemDef<SirsModel>> {
    params.validate()?;
    let x0 = vec![params.n0, params.s0, params.i0, 0.0];
    let v_bounds = vec![(0.0, params.v_max)];
    let horizon = params.horizon;
    ProblemDef::new(SirsModel { params }, 4, 1, 1, horizon, v_bounds, 0.0, x0)
}

/// Closed-form singular vaccination rate on a singular arc of the SIRS
/// problem, equivalent to solving `gamma_01 + v gamma_11 = 0` with the
/// brackets expanded by hand:
///
/// `v = -(omega + beta I / N) + p . (w1 + (N / (beta S I)) w2) / (2 p_I)`.
///
/// Valid only on the arc (it substitutes `H_v = 0` and `Hdot_v = 0`) and at
/// points where `p_I`, `p_S`, `S`, `I`, `N` are away from zero.
pub fn sirs_singular_v_closed_form(params: &SirsParams, x: &[f64], p: &[f64]) -> Result<f64> {
    let (n, s, i) = (x[0], x[1], x[2]);
    let (p_s, p_i, p_c) = (p[1], p[2], p[3]);
    let tol = 1e-12;
    if i.abs() < tol || s.abs() < tol || n.abs() < tol {
        return Err(Error::DegeneratePoint("S, I or N near zero".into()));
    }
    if p_i.abs() < tol || p_s.abs() < tol || p_c.abs() < tol {
        return Err(Error::DegeneratePoint("costate component near zero".into()));
    }
    let q = params;
    let growth = q.alpha * n * (1.0 - n / q.k);
    let growth_d = q.alpha * (1.0 - 2.0 * n / q.k);
    // u from the stationarity root H_u = 0: u = p_I I / (2 B3 p_C)
    let u = p_i * i / (2.0 * q.b3 * p_c);
    let w1 = [
        q.delta,
        2.0 * q.omega + q.beta * s / n,
        -(growth - q.delta * i) / n + 2.0 * (q.beta * i / n) * (p_i / p_s),
        -q.b1,
    ];
    // The S-component of w2 keeps the mu-proportional terms of the bracket
    // expansion; dropping them moves the value by ~1e-8 at the benchmark
    // parameters, which is above the agreement tolerance with the generic
    // Gamma machinery.
    let w2_s = -(growth_d + q.omega) * (growth - q.delta * i - q.mu * n)
        - q.omega * i * (q.delta + q.gamma + u + q.mu)
        - q.mu * (growth + q.omega * (n - i));
    let dotp_w1 = p[0] * w1[0] + p_s * w1[1] + p_i * w1[2] + p_c * w1[3];
    let dotp_w2 = p_s * w2_s;
    let v = -(q.omega + q.beta * i / n) + (dotp_w1 + (n / (q.beta * s * i)) * dotp_w2) / (2.0 * p_i);
    if !v.is_finite() {
        return Err(Error::DegeneratePoint("closed form non-finite".into()));
    }
    Ok(v)
}

/// Literal transcription of the published closed form, which drops the
/// mu-proportional terms in `w2`. Kept for comparison tests.
pub fn sirs_singular_v_published_form(params: &SirsParams, x: &[f64], p: &[f64]) -> Result<f64> {
    let (n, s, i) = (x[0], x[1], x[2]);
    let (p_s, p_i, p_c) = (p[1], p[2], p[3]);
    let tol = 1e-12;
    if i.abs() < tol
        || s.abs() < tol
        || n.abs() < tol
        || p_i.abs() < tol
        || p_s.abs() < tol
        || p_c.abs() < tol
    {
        return Err(Error::DegeneratePoint("degenerate state or costate".into()));
    }
    let q = params;
    let growth = q.alpha * n * (1.0 - n / q.k);
    let growth_d = q.alpha * (1.0 - 2.0 * n / q.k);
    let u = p_i * i / (2.0 * q.b3 * p_c);
    let w1 = [
        q.delta,
        2.0 * q.omega + q.beta * s / n,
        -(growth - q.delta * i) / n + 2.0 * (q.beta * i / n) * (p_i / p_s),
        -q.b1,
    ];
    let w2_s =
        -(growth_d + q.omega) * (growth - q.delta * i) - q.omega * i * (q.delta + q.gamma + u);
    let dotp_w1 = p[0] * w1[0] + p_s * w1[1] + p_i * w1[2] + p_c * w1[3];
    let dotp_w2 = p_s * w2_s;
    Ok(-(q.omega + q.beta * i / n) + (dotp_w1 + (n / (q.beta * s * i)) * dotp_w2) / (2.0 * p_i))
}

/// True when the treatment stays non-negative over the whole trajectory
/// (up to a small numerical slack).
pub fn check_nonneg_treatment(extremal: &Extremal) -> bool {
    extremal
        .u
        .iter()
        .flat_map(|row| row.iter())
        .all(|&u| u >= -1e-8)
}

/// Degenerate linear-quadratic problem:
/// minimize `-2 x2(2) + int_0^2 (x1^2 + x2^2 + u^2 + 10 x2 v) dt`
/// subject to `x1' = x2 + u`, `x2' = v`, `0 <= v <= 0.5`, `x1(2) = 1`,
/// `x1(0) = x2(0) = 0`. The integral is lifted into a third state.
#[derive(Clone, Debug)]
pub struct LqModel;

impl ProblemFunctions for LqModel {
    fn field<S: Scalar>(&self, i: usize, x: &[S], u: &[S]) -> Vec<S> {
        match i {
            0 => vec![
                x[1].clone() + u[0].clone(),
                S::zero(),
                x[0].clone() * x[0].clone()
                    + x[1].clone() * x[1].clone()
                    + u[0].clone() * u[0].clone(),
            ],
            1 => vec![S::zero(), S::one(), S::from_f64(10.0) * x[1].clone()],
            _ => panic!("LQ has a single affine field"),
        }
    }

    fn cost<S: Scalar>(&self, _x0: &[S], xt: &[S]) -> S {
        S::from_f64(-2.0) * xt[1].clone() + xt[2].clone()
    }

    fn constraints<S: Scalar>(&self, x0: &[S], xt: &[S]) -> Vec<S> {
        vec![
            xt[0].clone() - S::one(),
            x0[0].clone(),
            x0[1].clone(),
            x0[2].clone(),
        ]
    }
}

/// Fixed data of the degenerate LQ problem.
pub struct LqParams;

impl LqParams {
    pub const HORIZON: f64 = 2.0;
    pub const V_BOUNDS: (f64, f64) = (0.0, 0.5);
}

pub fn build_lq() -> Result<ProblemDef<LqModel>> {
    ProblemDef::new(
        LqModel,
        3,
        1,
        1,
        LqParams::HORIZON,
        vec![LqParams::V_BOUNDS],
        0.0,
        vec![0.0, 0.0, 0.0],
    )
}

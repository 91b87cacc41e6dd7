//! Steady-state LQG machinery for the base plant: the estimation and
//! control discrete algebraic Riccati equations, the fixed-gain Kalman
//! filter, the feedback law, and the quadratic cost evaluator.
//!
//! Both DAREs are solved by plain fixed-point iteration of the Riccati map
//! (initialized at Q resp. W, re-symmetrized every sweep) with convergence
//! criterion ||P_{i+1} - P_i||_F < 1e-12 (1 + ||P_i||_F). Inversions go
//! through a Cholesky factor of the innovation (resp. input) term, which is
//! positive definite whenever R (resp. U) is.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::StateSpaceModel;

const DARE_REL_TOL: f64 = 1e-12;
const DARE_MAX_ITERS: usize = 1_000_000;

/// Steady-state estimator: prediction covariance P and Kalman gain K.
#[derive(Debug, Clone)]
pub struct EstimatorGains {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

/// Steady-state controller: Riccati solution S and feedback gain L.
#[derive(Debug, Clone)]
pub struct ControllerGains {
    pub s: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

/// Quadratic cost weights: state weight W and input weight U, both PD.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub w: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl CostSpec {
    pub fn new(w: DMatrix<f64>, u: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_positive_definite(&w) {
            return Err(Error::numerical("cost weight W must be positive definite"));
        }
        if u.nrows() > 0 && !linalg::is_positive_definite(&u) {
            return Err(Error::numerical("cost weight U must be positive definite"));
        }
        Ok(CostSpec { w, u })
    }
}

/// Which half of the filter cycle an estimate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Predicted,
    Filtered,
}

/// A base-filter estimate tagged with its phase.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub phase: Phase,
}

impl FilterState {
    pub fn predicted(x_hat: DVector<f64>) -> Self {
        FilterState { x_hat, phase: Phase::Predicted }
    }
}

/// Result of one measurement-update / time-update cycle.
#[derive(Debug, Clone)]
pub struct KfStep {
    pub filtered: FilterState,
    pub predicted: FilterState,
}

/// Fixed point of P = APA' + Q - APC'(CPC'+R)^{-1}CPA' and the gain
/// K = PC'(CPC'+R)^{-1}.
pub fn solve_estimation_dare(model: &StateSpaceModel) -> Result<EstimatorGains> {
    let mut p = linalg::symmetrize(&model.q);
    for _ in 0..DARE_MAX_ITERS {
        let next = estimation_riccati_map(model, &p)?;
        let delta = linalg::frobenius(&(&next - &p));
        let done = delta < DARE_REL_TOL * (1.0 + linalg::frobenius(&p));
        p = next;
        if done {
            let s_inn = &model.c * &p * model.c.transpose() + &model.r;
            let chol = linalg::cholesky(&s_inn, "innovation covariance")?;
            // K = P C' S^{-1}, via S X = C P  =>  K = X'.
            let x = linalg::chol_solve_mat(&chol, &(&model.c * &p));
            let k = x.transpose();
            return Ok(EstimatorGains { p, k });
        }
    }
    let resid = estimation_dare_residual(model, &p)?;
    Err(Error::numerical(format!(
        "estimation DARE did not converge in {DARE_MAX_ITERS} iterations (residual {resid:.3e})"
    )))
}

fn estimation_riccati_map(model: &StateSpaceModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s_inn = &model.c * p * model.c.transpose() + &model.r;
    let chol = linalg::cholesky(&s_inn, "innovation covariance")?;
    let apct = &model.a * p * model.c.transpose();
    // S^{-1} (C P A')
    let sol = linalg::chol_solve_mat(&chol, &apct.transpose());
    let next = &model.a * p * model.a.transpose() + &model.q - &apct * &sol;
    Ok(linalg::symmetrize(&next))
}

/// Frobenius norm of the estimation Riccati equation residual at P.
pub fn estimation_dare_residual(model: &StateSpaceModel, p: &DMatrix<f64>) -> Result<f64> {
    let mapped = estimation_riccati_map(model, p)?;
    Ok(linalg::frobenius(&(&mapped - p)))
}

/// Fixed point of S = A'SA + W - A'SB(B'SB+U)^{-1}B'SA and the feedback
/// gain L = -(B'SB+U)^{-1}B'SA.
pub fn solve_control_dare(model: &StateSpaceModel, cost: &CostSpec) -> Result<ControllerGains> {
    if cost.w.nrows() != model.n || cost.u.nrows() != model.p {
        return Err(Error::dim(format!(
            "cost weights are {}x{} and {}x{}; model has n={} p={}",
            cost.w.nrows(),
            cost.w.ncols(),
            cost.u.nrows(),
            cost.u.ncols(),
            model.n,
            model.p
        )));
    }
    let mut s = linalg::symmetrize(&cost.w);
    for _ in 0..DARE_MAX_ITERS {
        let next = control_riccati_map(model, cost, &s)?;
        let delta = linalg::frobenius(&(&next - &s));
        let done = delta < DARE_REL_TOL * (1.0 + linalg::frobenius(&s));
        s = next;
        if done {
            let gram = model.b.transpose() * &s * &model.b + &cost.u;
            let chol = linalg::cholesky(&gram, "input gram matrix")?;
            let bsa = model.b.transpose() * &s * &model.a;
            let l = -linalg::chol_solve_mat(&chol, &bsa);
            return Ok(ControllerGains { s, l });
        }
    }
    let resid = control_dare_residual(model, cost, &s)?;
    Err(Error::numerical(format!(
        "control DARE did not converge in {DARE_MAX_ITERS} iterations (residual {resid:.3e})"
    )))
}

fn control_riccati_map(
    model: &StateSpaceModel,
    cost: &CostSpec,
    s: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let gram = model.b.transpose() * s * &model.b + &cost.u;
    let chol = linalg::cholesky(&gram, "input gram matrix")?;
    let bsa = model.b.transpose() * s * &model.a;
    let sol = linalg::chol_solve_mat(&chol, &bsa);
    let next = model.a.transpose() * s * &model.a + &cost.w - bsa.transpose() * &sol;
    Ok(linalg::symmetrize(&next))
}

/// Frobenius norm of the control Riccati equation residual at S.
pub fn control_dare_residual(
    model: &StateSpaceModel,
    cost: &CostSpec,
    s: &DMatrix<f64>,
) -> Result<f64> {
    let mapped = control_riccati_map(model, cost, s)?;
    Ok(linalg::frobenius(&(&mapped - s)))
}

/// Measurement update: x_{k|k} = (I - KC) x_{k|k-1} + K y.
pub fn kf_filter(
    gains: &EstimatorGains,
    model: &StateSpaceModel,
    state: &FilterState,
    y: &DVector<f64>,
) -> Result<FilterState> {
    if state.phase != Phase::Predicted {
        return Err(Error::numerical(
            "kf_filter expects a predicted-phase state",
        ));
    }
    if y.len() != model.m || state.x_hat.len() != model.n {
        return Err(Error::dim(format!(
            "kf_filter: y has {} entries, state has {}; model expects m={}, n={}",
            y.len(),
            state.x_hat.len(),
            model.m,
            model.n
        )));
    }
    let ikc = DMatrix::identity(model.n, model.n) - &gains.k * &model.c;
    Ok(FilterState {
        x_hat: &ikc * &state.x_hat + &gains.k * y,
        phase: Phase::Filtered,
    })
}

/// Time update: x_{k+1|k} = A x_{k|k} + B u_k.
pub fn kf_predict(
    model: &StateSpaceModel,
    state: &FilterState,
    u: &DVector<f64>,
) -> Result<FilterState> {
    if state.phase != Phase::Filtered {
        return Err(Error::numerical(
            "kf_predict expects a filtered-phase state",
        ));
    }
    if u.len() != model.p {
        return Err(Error::dim(format!(
            "kf_predict: u has {} entries, model expects p={}",
            u.len(),
            model.p
        )));
    }
    Ok(FilterState {
        x_hat: &model.a * &state.x_hat + &model.b * u,
        phase: Phase::Predicted,
    })
}

/// Full cycle: measurement update with y_k, then time update with u_k.
/// Returns both halves so callers can read the filtered estimate.
pub fn kf_step(
    gains: &EstimatorGains,
    state: &FilterState,
    y: &DVector<f64>,
    u: &DVector<f64>,
    model: &StateSpaceModel,
) -> Result<KfStep> {
    let filtered = kf_filter(gains, model, state, y)?;
    let predicted = kf_predict(model, &filtered, u)?;
    Ok(KfStep { filtered, predicted })
}

/// u = L x_{k|k}.
pub fn control_input(gains: &ControllerGains, x_hat_filtered: &DVector<f64>) -> DVector<f64> {
    &gains.l * x_hat_filtered
}

/// Finite-horizon average cost (1/T) sum_k (x_k' W x_k + u_k' U u_k) over
/// aligned state and input sequences.
pub fn evaluate_cost(
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    cost: &CostSpec,
) -> Result<f64> {
    if states.is_empty() || states.len() != inputs.len() {
        return Err(Error::dim(format!(
            "evaluate_cost: {} states vs {} inputs (need equal, nonzero)",
            states.len(),
            inputs.len()
        )));
    }
    let mut acc = 0.0;
    for (x, u) in states.iter().zip(inputs) {
        acc += (x.transpose() * &cost.w * x)[(0, 0)];
        acc += (u.transpose() * &cost.u * u)[(0, 0)];
    }
    Ok(acc / states.len() as f64)
}

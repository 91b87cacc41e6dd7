//! Posterior Cramer-Rao machinery: how well can any attacker estimate the
//! hidden state, and how small can it force the detection statistic?
//!
//! The exact linear-Gaussian path propagates the conditional Fisher
//! information with closed-form D-terms and is tight (the inverse equals
//! the Kalman filtered covariance). When the transition involves the random
//! target matrices the density becomes a Gaussian mixture over matrix
//! draws; the approximate S-term recursion then estimates the expectations
//! with weighted particles and finite-difference Hessians of the mixture
//! log-density. A small-horizon full-history construction serves as the
//! oracle for the approximate path.
//!
//! The end product is the detection bound tr(C' Pbar^{-1} C Z): with Z a
//! lower bound on the attacker's error matrix for the defender's filter
//! state, no choice of transmitted measurement pushes the expected residue
//! statistic below it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::attacker::systematic_resample;
use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::GaussianSampler;
use crate::stats;

/// Eigenvalue floor applied to indefinite sample estimates.
const EIG_FLOOR: f64 = 1e-10;
/// Central finite-difference step for mixture Hessians.
const FD_STEP: f64 = 1e-4;

/// One step of the hidden-state sequence: transition density for
/// zeta_{k+1} given zeta_k (inputs folded into the offset terms) and a
/// linear-Gaussian observation y = G zeta + v.
#[derive(Debug, Clone)]
pub enum SequenceModel {
    /// zeta' = F zeta + c + omega, omega ~ N(0, Q_omega).
    LinearGaussian {
        f: DMatrix<f64>,
        c: DVector<f64>,
        q_omega: DMatrix<f64>,
        g: DMatrix<f64>,
        r_v: DMatrix<f64>,
    },
    /// zeta' = F_m zeta + c_m + omega with m uniform over the components:
    /// the matrix uncertainty folded into the process noise as an
    /// equal-weight Gaussian mixture.
    MatrixMixture {
        maps: Vec<(DMatrix<f64>, DVector<f64>)>,
        q_omega: DMatrix<f64>,
        g: DMatrix<f64>,
        r_v: DMatrix<f64>,
    },
}

impl SequenceModel {
    pub fn dim(&self) -> usize {
        match self {
            SequenceModel::LinearGaussian { f, .. } => f.nrows(),
            SequenceModel::MatrixMixture { maps, .. } => maps[0].0.nrows(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            SequenceModel::LinearGaussian { g, .. } => g.nrows(),
            SequenceModel::MatrixMixture { g, .. } => g.nrows(),
        }
    }

    fn q_omega(&self) -> &DMatrix<f64> {
        match self {
            SequenceModel::LinearGaussian { q_omega, .. } => q_omega,
            SequenceModel::MatrixMixture { q_omega, .. } => q_omega,
        }
    }

    fn g(&self) -> &DMatrix<f64> {
        match self {
            SequenceModel::LinearGaussian { g, .. } => g,
            SequenceModel::MatrixMixture { g, .. } => g,
        }
    }

    fn r_v(&self) -> &DMatrix<f64> {
        match self {
            SequenceModel::LinearGaussian { r_v, .. } => r_v,
            SequenceModel::MatrixMixture { r_v, .. } => r_v,
        }
    }

    /// Sample zeta_{k+1} given zeta_k.
    pub fn sample_transition(
        &self,
        zeta: &DVector<f64>,
        rng: &mut impl Rng,
    ) -> Result<DVector<f64>> {
        let noise = GaussianSampler::new(self.q_omega().clone(), 0)?;
        Ok(match self {
            SequenceModel::LinearGaussian { f, c, .. } => f * zeta + c + noise.draw(rng),
            SequenceModel::MatrixMixture { maps, .. } => {
                let m = (rng.random::<u64>() % maps.len() as u64) as usize;
                let (f, c) = &maps[m];
                f * zeta + c + noise.draw(rng)
            }
        })
    }

    /// Sample y_k given zeta_k.
    pub fn sample_observation(
        &self,
        zeta: &DVector<f64>,
        rng: &mut impl Rng,
    ) -> Result<DVector<f64>> {
        let noise = GaussianSampler::new(self.r_v().clone(), 0)?;
        Ok(self.g() * zeta + noise.draw(rng))
    }

    /// log f(zeta'|zeta).
    pub fn trans_log_density(&self, zeta: &DVector<f64>, zeta_next: &DVector<f64>) -> Result<f64> {
        let chol = linalg::cholesky(self.q_omega(), "transition noise covariance").map_err(|_| {
            Error::numerical(
                "transition noise covariance is singular; add jitter regularization \
                 (a small multiple of the identity) to Q_omega",
            )
        })?;
        let log_det = linalg::chol_log_det(&chol);
        match self {
            SequenceModel::LinearGaussian { f, c, .. } => {
                let resid = zeta_next - f * zeta - c;
                Ok(stats::mvn_log_pdf(&chol, log_det, &resid))
            }
            SequenceModel::MatrixMixture { maps, .. } => {
                let mut lps = Vec::with_capacity(maps.len());
                for (f, c) in maps {
                    let resid = zeta_next - f * zeta - c;
                    lps.push(stats::mvn_log_pdf(&chol, log_det, &resid));
                }
                let max = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = lps.iter().map(|lp| (lp - max).exp()).sum();
                Ok(max + (sum / maps.len() as f64).ln())
            }
        }
    }

    /// log f(y|zeta).
    pub fn obs_log_density(&self, zeta: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let chol = linalg::cholesky(self.r_v(), "observation noise covariance")?;
        let log_det = linalg::chol_log_det(&chol);
        let resid = y - self.g() * zeta;
        Ok(stats::mvn_log_pdf(&chol, log_det, &resid))
    }

    /// G' R_v^{-1} G, the observation information.
    fn obs_information(&self) -> Result<DMatrix<f64>> {
        let chol = linalg::cholesky(self.r_v(), "observation noise covariance")?;
        let sol = linalg::chol_solve_mat(&chol, self.g());
        Ok(linalg::symmetrize(&(self.g().transpose() * sol)))
    }
}

/// Conditional Fisher information about the current hidden state, and the
/// error-matrix bound it implies.
#[derive(Debug, Clone)]
pub struct FisherState {
    pub i_mat: DMatrix<f64>,
    pub step: usize,
}

impl FisherState {
    /// Prior information: the inverse of the initial covariance.
    pub fn from_prior_cov(sigma0: &DMatrix<f64>) -> Result<Self> {
        let chol = linalg::cholesky(sigma0, "prior covariance")?;
        let i_mat = linalg::symmetrize(&chol.inverse());
        Ok(FisherState { i_mat, step: 0 })
    }

    /// Error-matrix lower bound Z = I^{-1}.
    pub fn z_bound(&self) -> Result<DMatrix<f64>> {
        let chol = linalg::cholesky(&self.i_mat, "Fisher information")?;
        Ok(linalg::symmetrize(&chol.inverse()))
    }
}

/// A static Gaussian estimation problem: zeta ~ N(0, sigma0),
/// y = H zeta + N(0, r).
#[derive(Debug, Clone)]
pub struct StaticGaussianProblem {
    pub sigma0: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Monte Carlo Van Trees evaluation: draw (zeta, y) from the joint, average
/// finite-difference Hessians of -log f(zeta, y) for the Fisher matrix, and
/// measure the supplied estimator's error matrix on the same draws.
/// Returns (empirical MSE matrix, Fisher information matrix).
pub fn van_trees_bound<E>(
    prob: &StaticGaussianProblem,
    estimator: E,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    E: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = prob.sigma0.nrows();
    let prior = GaussianSampler::new(prob.sigma0.clone(), 0)?;
    let obs_noise = GaussianSampler::new(prob.r.clone(), 1)?;
    let prior_chol = linalg::cholesky(&prob.sigma0, "prior")?;
    let prior_ld = linalg::chol_log_det(&prior_chol);
    let r_chol = linalg::cholesky(&prob.r, "observation noise")?;
    let r_ld = linalg::chol_log_det(&r_chol);

    let log_joint = |zeta: &DVector<f64>, y: &DVector<f64>| -> f64 {
        stats::mvn_log_pdf(&prior_chol, prior_ld, zeta)
            + stats::mvn_log_pdf(&r_chol, r_ld, &(y - &prob.h * zeta))
    };

    let mut fisher = DMatrix::<f64>::zeros(d, d);
    let mut mse = DMatrix::<f64>::zeros(d, d);
    let h = FD_STEP;
    for _ in 0..samples {
        let zeta = prior.draw(rng);
        let y = &prob.h * &zeta + obs_noise.draw(rng);

        // Central-difference Hessian of -log f at (zeta, y), in zeta only.
        let f0 = log_joint(&zeta, &y);
        for i in 0..d {
            for j in i..d {
                let hess = if i == j {
                    let mut zp = zeta.clone();
                    zp[i] += h;
                    let mut zm = zeta.clone();
                    zm[i] -= h;
                    (log_joint(&zp, &y) - 2.0 * f0 + log_joint(&zm, &y)) / (h * h)
                } else {
                    let mut zpp = zeta.clone();
                    zpp[i] += h;
                    zpp[j] += h;
                    let mut zpm = zeta.clone();
                    zpm[i] += h;
                    zpm[j] -= h;
                    let mut zmp = zeta.clone();
                    zmp[i] -= h;
                    zmp[j] += h;
                    let mut zmm = zeta.clone();
                    zmm[i] -= h;
                    zmm[j] -= h;
                    (log_joint(&zpp, &y) - log_joint(&zpm, &y) - log_joint(&zmp, &y)
                        + log_joint(&zmm, &y))
                        / (4.0 * h * h)
                };
                fisher[(i, j)] -= hess;
                if i != j {
                    fisher[(j, i)] -= hess;
                }
            }
        }

        let err = estimator(&y) - &zeta;
        mse += &err * err.transpose();
    }
    fisher /= samples as f64;
    mse /= samples as f64;
    if !linalg::is_positive_definite(&linalg::symmetrize(&fisher)) {
        return Err(Error::numerical(format!(
            "Monte Carlo Fisher estimate not positive definite after {samples} samples"
        )));
    }
    Ok((mse, linalg::symmetrize(&fisher)))
}

/// Exact D-term recursion for a linear-Gaussian step:
/// I_{k+1} = D22 - D21 (D11 + I_k)^{-1} D12 with
/// D11 = F'Q^{-1}F, D12 = -F'Q^{-1}, D22 = Q^{-1} + G'R^{-1}G.
pub fn fisher_step_exact_linear(model: &SequenceModel, prev: &FisherState) -> Result<FisherState> {
    let (f, q_omega) = match model {
        SequenceModel::LinearGaussian { f, q_omega, .. } => (f, q_omega),
        SequenceModel::MatrixMixture { .. } => {
            return Err(Error::numerical(
                "fisher_step_exact_linear requires a linear-Gaussian model",
            ))
        }
    };
    let d = f.nrows();
    if prev.i_mat.nrows() != d {
        return Err(Error::dim(format!(
            "Fisher state is {}x{}, model dimension {d}",
            prev.i_mat.nrows(),
            prev.i_mat.ncols()
        )));
    }
    let q_chol = linalg::cholesky(q_omega, "Q_omega").map_err(|_| {
        Error::numerical(
            "Q_omega is singular; add jitter regularization (a small multiple of \
             the identity) before running the information recursion",
        )
    })?;
    let q_inv = linalg::symmetrize(&q_chol.inverse());
    let d11 = linalg::symmetrize(&(f.transpose() * &q_inv * f));
    let d12 = -(f.transpose() * &q_inv);
    let d22 = linalg::symmetrize(&(&q_inv + model.obs_information()?));

    let inner = linalg::symmetrize(&(&d11 + &prev.i_mat));
    let inner_chol = linalg::cholesky(&inner, "D11 + I_A")?;
    let sol = linalg::chol_solve_mat(&inner_chol, &d12);
    let i_next = linalg::symmetrize(&(&d22 - d12.transpose() * sol));
    Ok(FisherState { i_mat: i_next, step: prev.step + 1 })
}

/// Weighted pairs (zeta_{k-1}, zeta_k) approximating the joint posterior,
/// as produced by [`PosteriorCloud::step`].
#[derive(Debug, Clone)]
pub struct TransitionPairs {
    pub prev: Vec<DVector<f64>>,
    pub next: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

/// Result of one particle S-term step: the updated information and the
/// largest Monte Carlo standard error among the S-matrix entries.
#[derive(Debug, Clone)]
pub struct ParticleFisherStep {
    pub state: FisherState,
    pub max_entry_se: f64,
    /// Whether the eigenvalue floor had to repair an indefinite estimate.
    pub floored: bool,
}

/// Approximate S-term recursion: S-matrices estimated as weighted particle
/// averages of the negative second differentials of the transition
/// log-density (analytic for a single Gaussian, central finite differences
/// for mixtures), plus the analytic observation information.
pub fn fisher_step_particle(
    model: &SequenceModel,
    prev: &FisherState,
    pairs: &TransitionPairs,
) -> Result<ParticleFisherStep> {
    let d = model.dim();
    if pairs.prev.is_empty() || pairs.prev.len() != pairs.next.len() {
        return Err(Error::dim("empty or mismatched transition pairs".to_string()));
    }

    let (s11, s12, s22t, max_se) = match model {
        SequenceModel::LinearGaussian { f, q_omega, .. } => {
            // Constant Hessians; no sampling variance.
            let q_chol = linalg::cholesky(q_omega, "Q_omega").map_err(|_| {
                Error::numerical(
                    "Q_omega is singular; add jitter regularization (a small multiple \
                     of the identity) before running the information recursion",
                )
            })?;
            let q_inv = linalg::symmetrize(&q_chol.inverse());
            let s11 = linalg::symmetrize(&(f.transpose() * &q_inv * f));
            let s12 = -(f.transpose() * &q_inv);
            (s11, s12, q_inv, 0.0)
        }
        SequenceModel::MatrixMixture { .. } => {
            let mut acc11 = DMatrix::<f64>::zeros(d, d);
            let mut acc12 = DMatrix::<f64>::zeros(d, d);
            let mut acc22 = DMatrix::<f64>::zeros(d, d);
            let mut sq11 = DMatrix::<f64>::zeros(d, d);
            let mut sq12 = DMatrix::<f64>::zeros(d, d);
            let mut sq22 = DMatrix::<f64>::zeros(d, d);
            for ((zp, zn), w) in pairs.prev.iter().zip(&pairs.next).zip(&pairs.weights) {
                let (h11, h12, h22) = fd_neg_hessian_blocks(model, zp, zn)?;
                acc11 += *w * &h11;
                acc12 += *w * &h12;
                acc22 += *w * &h22;
                sq11 += *w * h11.map(|v| v * v);
                sq12 += *w * h12.map(|v| v * v);
                sq22 += *w * h22.map(|v| v * v);
            }
            // Weighted standard error with effective sample size.
            let ess = 1.0 / pairs.weights.iter().map(|w| w * w).sum::<f64>();
            let se_of = |acc: &DMatrix<f64>, sq: &DMatrix<f64>| -> f64 {
                let mut worst = 0.0f64;
                for i in 0..d {
                    for j in 0..d {
                        let var = (sq[(i, j)] - acc[(i, j)] * acc[(i, j)]).max(0.0);
                        worst = worst.max((var / ess).sqrt());
                    }
                }
                worst
            };
            let max_se = se_of(&acc11, &sq11)
                .max(se_of(&acc12, &sq12))
                .max(se_of(&acc22, &sq22));
            (linalg::symmetrize(&acc11), acc12, linalg::symmetrize(&acc22), max_se)
        }
    };

    let s22 = linalg::symmetrize(&(&s22t + model.obs_information()?));

    let inner_raw = linalg::symmetrize(&(&s11 + &prev.i_mat));
    let mut floored = false;
    let inner = if linalg::is_positive_definite(&inner_raw) {
        inner_raw
    } else {
        floored = true;
        linalg::floor_eigenvalues(&inner_raw, EIG_FLOOR)
    };
    let inner_chol = linalg::cholesky(&inner, "S11 + I_A")?;
    let sol = linalg::chol_solve_mat(&inner_chol, &s12);
    let i_raw = linalg::symmetrize(&(&s22 - s12.transpose() * sol));
    let i_next = if linalg::is_positive_definite(&i_raw) {
        i_raw
    } else {
        floored = true;
        linalg::floor_eigenvalues(&i_raw, EIG_FLOOR)
    };
    Ok(ParticleFisherStep {
        state: FisherState { i_mat: i_next, step: prev.step + 1 },
        max_entry_se: max_se,
        floored,
    })
}

/// Central finite-difference blocks of the negative joint Hessian of
/// log f(zeta_next | zeta_prev): (prev,prev), (prev,next), (next,next).
fn fd_neg_hessian_blocks(
    model: &SequenceModel,
    zeta_prev: &DVector<f64>,
    zeta_next: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let d = zeta_prev.len();
    let h = FD_STEP;
    let eval = |zp: &DVector<f64>, zn: &DVector<f64>| model.trans_log_density(zp, zn);
    let f0 = eval(zeta_prev, zeta_next)?;

    let mut h11 = DMatrix::zeros(d, d);
    let mut h12 = DMatrix::zeros(d, d);
    let mut h22 = DMatrix::zeros(d, d);

    let perturb = |v: &DVector<f64>, i: usize, delta: f64| {
        let mut out = v.clone();
        out[i] += delta;
        out
    };

    for i in 0..d {
        let dpp = eval(&perturb(zeta_prev, i, h), zeta_next)?;
        let dpm = eval(&perturb(zeta_prev, i, -h), zeta_next)?;
        h11[(i, i)] = -(dpp - 2.0 * f0 + dpm) / (h * h);
        let dnp = eval(zeta_prev, &perturb(zeta_next, i, h))?;
        let dnm = eval(zeta_prev, &perturb(zeta_next, i, -h))?;
        h22[(i, i)] = -(dnp - 2.0 * f0 + dnm) / (h * h);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let pp = eval(&perturb(&perturb(zeta_prev, i, h), j, h), zeta_next)?;
            let pm = eval(&perturb(&perturb(zeta_prev, i, h), j, -h), zeta_next)?;
            let mp = eval(&perturb(&perturb(zeta_prev, i, -h), j, h), zeta_next)?;
            let mm = eval(&perturb(&perturb(zeta_prev, i, -h), j, -h), zeta_next)?;
            let v = -(pp - pm - mp + mm) / (4.0 * h * h);
            h11[(i, j)] = v;
            h11[(j, i)] = v;

            let pp = eval(zeta_prev, &perturb(&perturb(zeta_next, i, h), j, h))?;
            let pm = eval(zeta_prev, &perturb(&perturb(zeta_next, i, h), j, -h))?;
            let mp = eval(zeta_prev, &perturb(&perturb(zeta_next, i, -h), j, h))?;
            let mm = eval(zeta_prev, &perturb(&perturb(zeta_next, i, -h), j, -h))?;
            let v = -(pp - pm - mp + mm) / (4.0 * h * h);
            h22[(i, j)] = v;
            h22[(j, i)] = v;
        }
    }
    for i in 0..d {
        for j in 0..d {
            let pp = eval(&perturb(zeta_prev, i, h), &perturb(zeta_next, j, h))?;
            let pm = eval(&perturb(zeta_prev, i, h), &perturb(zeta_next, j, -h))?;
            let mp = eval(&perturb(zeta_prev, i, -h), &perturb(zeta_next, j, h))?;
            let mm = eval(&perturb(zeta_prev, i, -h), &perturb(zeta_next, j, -h))?;
            h12[(i, j)] = -(pp - pm - mp + mm) / (4.0 * h * h);
        }
    }
    Ok((h11, h12, h22))
}

/// Bound-mode particle posterior over the hidden state, used to form the
/// expectation in the S-term recursion. Same systematic-resampling
/// machinery as the attacker's filter.
#[derive(Debug, Clone)]
pub struct PosteriorCloud {
    pub states: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl PosteriorCloud {
    /// Initialize from a Gaussian prior.
    pub fn init(
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        n_particles: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_particles < 2 {
            return Err(Error::numerical("bound cloud needs at least 2 particles"));
        }
        let sampler = GaussianSampler::new(cov.clone(), 0)?;
        let states = (0..n_particles).map(|_| mean + sampler.draw(rng)).collect();
        Ok(PosteriorCloud {
            states,
            weights: vec![1.0 / n_particles as f64; n_particles],
        })
    }

    /// Propagate through the step model, reweight by the observation, and
    /// return the transition pairs that feed the S-term averages.
    pub fn step(
        &self,
        model: &SequenceModel,
        y: &DVector<f64>,
        rng: &mut impl Rng,
    ) -> Result<(PosteriorCloud, TransitionPairs)> {
        let mut next_states = Vec::with_capacity(self.states.len());
        let mut log_w = Vec::with_capacity(self.states.len());
        for (zeta, w) in self.states.iter().zip(&self.weights) {
            let zn = model.sample_transition(zeta, rng)?;
            let ll = model.obs_log_density(&zn, y)?;
            log_w.push(w.ln() + ll);
            next_states.push(zn);
        }
        let max_lw = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max_lw.is_finite() {
            let min_lw = log_w.iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(Error::AllWeightsZero {
                min_log_lik: min_lw,
                max_log_lik: max_lw,
            });
        }
        let mut weights: Vec<f64> = log_w.iter().map(|lw| (lw - max_lw).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }

        let pairs = TransitionPairs {
            prev: self.states.clone(),
            next: next_states.clone(),
            weights: weights.clone(),
        };

        let n = weights.len();
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cloud = if ess < 0.5 * n as f64 {
            let idx = systematic_resample(&weights, rng);
            PosteriorCloud {
                states: idx.iter().map(|&i| next_states[i].clone()).collect(),
                weights: vec![1.0 / n as f64; n],
            }
        } else {
            PosteriorCloud { states: next_states, weights }
        };
        Ok((cloud, pairs))
    }
}

/// Full-history Fisher information over zeta_{0:T} by Monte Carlo, with the
/// exact conditional bound extracted as the lower-right block of the
/// inverse. Only valid at tiny sizes; the oracle for the recursions.
pub fn small_horizon_exact_ia(
    models: &[SequenceModel],
    sigma0: &DMatrix<f64>,
    mc_samples: usize,
    rng: &mut impl Rng,
) -> Result<FisherState> {
    let horizon = models.len();
    let d = sigma0.nrows();
    if d * horizon > 8 {
        return Err(Error::dim(format!(
            "small-horizon oracle limited to dim * horizon <= 8, got {d} * {horizon}"
        )));
    }
    let full = d * (horizon + 1);
    let prior_sampler = GaussianSampler::new(sigma0.clone(), 0)?;
    let prior_chol = linalg::cholesky(sigma0, "prior covariance")?;
    let prior_ld = linalg::chol_log_det(&prior_chol);

    let mut fisher = DMatrix::<f64>::zeros(full, full);
    let h = FD_STEP;
    for _ in 0..mc_samples {
        // Simulate one trajectory and its measurements.
        let mut zetas = vec![prior_sampler.draw(rng)];
        let mut ys = Vec::with_capacity(horizon);
        for model in models {
            let zn = model.sample_transition(zetas.last().unwrap(), rng)?;
            ys.push(model.sample_observation(&zn, rng)?);
            zetas.push(zn);
        }

        let flat: DVector<f64> = {
            let mut v = DVector::zeros(full);
            for (k, z) in zetas.iter().enumerate() {
                v.rows_mut(k * d, d).copy_from(z);
            }
            v
        };
        let log_full = |v: &DVector<f64>| -> Result<f64> {
            let z0 = v.rows(0, d).clone_owned();
            let mut lp = stats::mvn_log_pdf(&prior_chol, prior_ld, &z0);
            for (k, model) in models.iter().enumerate() {
                let zp = v.rows(k * d, d).clone_owned();
                let zn = v.rows((k + 1) * d, d).clone_owned();
                lp += model.trans_log_density(&zp, &zn)?;
                lp += model.obs_log_density(&zn, &ys[k])?;
            }
            Ok(lp)
        };

        let f0 = log_full(&flat)?;
        for i in 0..full {
            for j in i..full {
                let hess = if i == j {
                    let mut vp = flat.clone();
                    vp[i] += h;
                    let mut vm = flat.clone();
                    vm[i] -= h;
                    (log_full(&vp)? - 2.0 * f0 + log_full(&vm)?) / (h * h)
                } else {
                    let mut vpp = flat.clone();
                    vpp[i] += h;
                    vpp[j] += h;
                    let mut vpm = flat.clone();
                    vpm[i] += h;
                    vpm[j] -= h;
                    let mut vmp = flat.clone();
                    vmp[i] -= h;
                    vmp[j] += h;
                    let mut vmm = flat.clone();
                    vmm[i] -= h;
                    vmm[j] -= h;
                    (log_full(&vpp)? - log_full(&vpm)? - log_full(&vmp)? + log_full(&vmm)?)
                        / (4.0 * h * h)
                };
                fisher[(i, j)] -= hess;
                if i != j {
                    fisher[(j, i)] -= hess;
                }
            }
        }
    }
    fisher /= mc_samples as f64;
    fisher = linalg::symmetrize(&fisher);

    let chol = linalg::cholesky(&fisher, "full-history Fisher")?;
    let inv = chol.inverse();
    let z_block = linalg::symmetrize(&inv.view((horizon * d, horizon * d), (d, d)).clone_owned());
    let z_chol = linalg::cholesky(&z_block, "conditional bound block")?;
    Ok(FisherState {
        i_mat: linalg::symmetrize(&z_chol.inverse()),
        step: horizon,
    })
}

/// Theorem-style detection bound: tr(C' Pbar^{-1} C Z). Z must be PSD.
pub fn detection_bound(
    c_stack: &DMatrix<f64>,
    p_bar: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<f64> {
    let d = c_stack.ncols();
    if z.nrows() != d || z.ncols() != d {
        return Err(Error::dim(format!(
            "Z is {}x{}, expected {d}x{d}",
            z.nrows(),
            z.ncols()
        )));
    }
    if p_bar.nrows() != c_stack.nrows() || p_bar.ncols() != c_stack.nrows() {
        return Err(Error::dim(format!(
            "P_bar is {}x{}, expected {}x{}",
            p_bar.nrows(),
            p_bar.ncols(),
            c_stack.nrows(),
            c_stack.nrows()
        )));
    }
    let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(z));
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = eig.eigenvalues.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    if min_eig < -1e-10 * scale.max(1.0) {
        return Err(Error::numerical(format!(
            "Z is not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    let chol = linalg::cholesky(p_bar, "residue covariance")?;
    let sol = linalg::chol_solve_mat(&chol, c_stack);
    Ok((c_stack.transpose() * sol * z).trace())
}

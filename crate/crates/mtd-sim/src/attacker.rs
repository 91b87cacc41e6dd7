//! The adversary: a man in the middle on every sensor and actuator channel.
//!
//! The attacker knows the base model, the controller and filter gains, the
//! joint noise covariances, and the distribution of the target matrices,
//! but never a realized matrix. Everything it computes flows through an
//! [`InfoView`], which by construction cannot hold a realization.
//!
//! Three strategies are implemented. The trivial zero-dynamics attack
//! cancels its own influence exactly and only works when the sensor suite
//! is the base one. The two moving-target attacks track the hidden state
//! with a particle filter: attack 1 estimates the output bias its inputs
//! caused and subtracts it; attack 2 estimates what measurement the
//! defender's filter expects and transmits that instead.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::moving_target::{sample_target, TargetDistribution};
use crate::plant::{GaussianSampler, StateSpaceModel};
use crate::stats;

/// Everything the adversary knows a priori: the base system, the defender's
/// steady-state gains, and the joint noise covariances.
#[derive(Debug, Clone)]
pub struct KnownModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k_gain: DMatrix<f64>,
    pub l_gain: DMatrix<f64>,
    pub q_cal: DMatrix<f64>,
    pub r_cal: DMatrix<f64>,
}

impl KnownModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn nt(&self) -> usize {
        self.q_cal.nrows() - self.n()
    }

    pub fn mt(&self) -> usize {
        self.r_cal.nrows() - self.m()
    }

    /// Stacked sensor map for a hypothesized extraneous block.
    pub fn c_stacked(&self, c_t: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.mt() + self.m(), self.nt() + self.n());
        c.view_mut((0, 0), (self.mt(), self.nt())).copy_from(c_t);
        c.view_mut((self.mt(), self.nt()), (self.m(), self.n()))
            .copy_from(&self.c);
        c
    }

    /// Stacked transition for hypothesized target blocks.
    pub fn a_stacked(&self, a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> DMatrix<f64> {
        let nt = self.nt();
        let n = self.n();
        let mut a = DMatrix::zeros(nt + n, nt + n);
        a.view_mut((0, 0), (nt, nt)).copy_from(a1);
        a.view_mut((0, nt), (nt, n)).copy_from(a2);
        a.view_mut((nt, nt), (n, n)).copy_from(&self.a);
        a
    }

    /// Stacked input map for a hypothesized target block.
    pub fn b_stacked(&self, b_t: &DMatrix<f64>) -> DMatrix<f64> {
        let nt = self.nt();
        let mut b = DMatrix::zeros(nt + self.n(), self.p());
        b.view_mut((0, 0), (nt, self.p())).copy_from(b_t);
        b.view_mut((nt, 0), (self.n(), self.p())).copy_from(&self.b);
        b
    }
}

/// The attacker's information set: public knowledge plus the channel
/// history it has read or written. This type never holds a sampled target
/// realization; the attacker can only see the matrix distribution.
#[derive(Debug, Clone)]
pub struct InfoView {
    pub model: KnownModel,
    pub tdist: TargetDistribution,
    /// True outputs read off the sensor wires.
    pub y_bar_hist: Vec<DVector<f64>>,
    /// Defender inputs read off the actuator wires.
    pub u_hist: Vec<DVector<f64>>,
    /// The attacker's own actuator injections.
    pub u_a_hist: Vec<DVector<f64>>,
    /// The attacker's own sensor biases.
    pub s_a_hist: Vec<DVector<f64>>,
    /// Transmitted (tampered) outputs the defender received.
    pub y_a_hist: Vec<DVector<f64>>,
}

impl InfoView {
    pub fn new(model: KnownModel, tdist: TargetDistribution) -> Self {
        InfoView {
            model,
            tdist,
            y_bar_hist: Vec::new(),
            u_hist: Vec::new(),
            u_a_hist: Vec::new(),
            s_a_hist: Vec::new(),
            y_a_hist: Vec::new(),
        }
    }
}

/// Actuator and sensor injections for one step.
#[derive(Debug, Clone)]
pub struct AttackChannels {
    pub u_a: DVector<f64>,
    pub s_a: DVector<f64>,
}

impl AttackChannels {
    pub fn passive(p: usize, m_bar: usize) -> Self {
        AttackChannels {
            u_a: DVector::zeros(p),
            s_a: DVector::zeros(m_bar),
        }
    }
}

/// What flows on the wires before tampering.
#[derive(Debug, Clone)]
pub struct ChannelIo {
    pub u_defender: DVector<f64>,
    pub y_bar_true: DVector<f64>,
}

/// What the plant and the operator actually receive.
#[derive(Debug, Clone)]
pub struct TamperedIo {
    pub u_plant: DVector<f64>,
    pub y_bar_received: DVector<f64>,
}

/// Apply the man-in-the-middle tamper: the plant receives u + u_a, the
/// operator receives y + s_a, and the true traffic is recorded in the view.
pub fn apply_attack(
    io: &ChannelIo,
    channels: &AttackChannels,
    view: &mut InfoView,
) -> Result<TamperedIo> {
    if channels.u_a.len() != io.u_defender.len() || channels.s_a.len() != io.y_bar_true.len() {
        return Err(Error::dim(format!(
            "attack channels sized ({}, {}), wires carry ({}, {})",
            channels.u_a.len(),
            channels.s_a.len(),
            io.u_defender.len(),
            io.y_bar_true.len()
        )));
    }
    let tampered = TamperedIo {
        u_plant: &io.u_defender + &channels.u_a,
        y_bar_received: &io.y_bar_true + &channels.s_a,
    };
    view.y_bar_hist.push(io.y_bar_true.clone());
    view.u_hist.push(io.u_defender.clone());
    view.u_a_hist.push(channels.u_a.clone());
    view.s_a_hist.push(channels.s_a.clone());
    view.y_a_hist.push(tampered.y_bar_received.clone());
    Ok(tampered)
}

/// State of the trivial zero-dynamics attack: the influence the attacker's
/// inputs have had on the base plant.
#[derive(Debug, Clone)]
pub struct ZeroDynState {
    pub x_a: DVector<f64>,
}

impl ZeroDynState {
    pub fn new(n: usize) -> Self {
        ZeroDynState { x_a: DVector::zeros(n) }
    }
}

/// One step of the zero-dynamics attack against the base sensor block:
/// emits s_a = -C x_a for the current step and advances the influence
/// state by x_a' = A x_a + B u_a.
pub fn zero_dyn_step(
    state: &ZeroDynState,
    u_a: &DVector<f64>,
    base: &StateSpaceModel,
) -> Result<(ZeroDynState, DVector<f64>)> {
    if state.x_a.len() != base.n || u_a.len() != base.p {
        return Err(Error::dim(format!(
            "zero_dyn_step: state {}, u_a {} vs model n={}, p={}",
            state.x_a.len(),
            u_a.len(),
            base.n,
            base.p
        )));
    }
    let s_a = -(&base.c * &state.x_a);
    let next = ZeroDynState {
        x_a: &base.a * &state.x_a + &base.b * u_a,
    };
    Ok((next, s_a))
}

/// Which Bayesian strategy a particle cloud implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    /// Track (x_bar, x_bar_a, C~): estimate the output bias own inputs
    /// caused, subtract it.
    Attack1,
    /// Track (x_bar, x_hat_bar, C~ [, P]): estimate the measurement the
    /// defender's filter expects, transmit it.
    Attack2,
}

/// One hypothesis of the hidden state.
#[derive(Debug, Clone)]
pub struct Particle {
    /// Hypothesized true stacked state [x~; x].
    pub x_bar: DVector<f64>,
    /// Attack 1: the influence state [x~_a; x_a]. Attack 2: the defender's
    /// predicted estimate [x~_hat; x_hat].
    pub aux: DVector<f64>,
    /// Hypothesized current extraneous sensor map C~_k.
    pub c_t: DMatrix<f64>,
    /// Attack 2 in full mode: the hypothesized filter covariance P_k.
    pub p_cal: Option<DMatrix<f64>>,
}

/// Weighted particle approximation of the attacker's posterior.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub particles: Vec<Particle>,
    pub weights: Vec<f64>,
    pub mode: AttackMode,
    /// Whether the filter-gain oracle of the performance analysis is in
    /// effect (attack 2 only).
    pub oracle_p: bool,
    /// Resample when ESS < threshold_frac * N.
    pub ess_threshold_frac: f64,
}

impl ParticleCloud {
    /// Build a cloud directly from particles (uniform weights). Used by
    /// tests exercising degenerate cases the sampling constructor rejects.
    pub fn from_particles(particles: Vec<Particle>, mode: AttackMode, oracle_p: bool) -> Self {
        let n = particles.len();
        ParticleCloud {
            particles,
            weights: vec![1.0 / n as f64; n],
            mode,
            oracle_p,
            ess_threshold_frac: 0.5,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Effective sample size 1 / sum w_i^2.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn posterior_mean_x_bar(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.particles[0].x_bar.len());
        for (p, w) in self.particles.iter().zip(&self.weights) {
            acc += *w * &p.x_bar;
        }
        acc
    }

    pub fn posterior_mean_aux(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.particles[0].aux.len());
        for (p, w) in self.particles.iter().zip(&self.weights) {
            acc += *w * &p.aux;
        }
        acc
    }
}

/// The attacker's prior over the stacked state at attack start, and its
/// model of the defender's filter error at that time.
#[derive(Debug, Clone)]
pub struct AttackerPrior {
    /// Covariance of [x~; x] at attack start (mean zero).
    pub x_bar_cov: DMatrix<f64>,
    /// Covariance of the defender's one-step prediction error, used to
    /// place x_hat_bar hypotheses around x_bar (attack 2) and to seed
    /// per-particle covariances in full mode.
    pub filter_err_cov: DMatrix<f64>,
}

impl AttackerPrior {
    /// Stationary prior derived from public knowledge: the base block from
    /// the closed-loop Lyapunov equation, the extraneous block from a trace
    /// fixed point of the random-matrix second-moment recursion. Cross
    /// blocks are dropped.
    pub fn stationary(view: &InfoView) -> Result<AttackerPrior> {
        let model = &view.model;
        let n = model.n();
        let nt = model.nt();
        let q_base = model.q_cal.view((nt, nt), (n, n)).clone_owned();
        let r_base = model
            .r_cal
            .view((model.mt(), model.mt()), (model.m(), model.m()))
            .clone_owned();
        let q_t = model.q_cal.view((0, 0), (nt, nt)).clone_owned();

        // Joint stationary covariance of (x, x_pred) under output feedback.
        let ikc = DMatrix::identity(n, n) - &model.k_gain * &model.c;
        let bl = &model.b * &model.l_gain;
        let abl = &model.a + &bl;
        let mut f_mat = DMatrix::zeros(2 * n, 2 * n);
        f_mat
            .view_mut((0, 0), (n, n))
            .copy_from(&(&model.a + &bl * &model.k_gain * &model.c));
        f_mat.view_mut((0, n), (n, n)).copy_from(&(&bl * &ikc));
        f_mat
            .view_mut((n, 0), (n, n))
            .copy_from(&(&abl * &model.k_gain * &model.c));
        f_mat.view_mut((n, n), (n, n)).copy_from(&(&abl * &ikc));
        let kr_kt = &model.k_gain * &r_base * model.k_gain.transpose();
        let mut noise = DMatrix::zeros(2 * n, 2 * n);
        noise
            .view_mut((0, 0), (n, n))
            .copy_from(&(&q_base + &bl * &kr_kt * bl.transpose()));
        noise
            .view_mut((0, n), (n, n))
            .copy_from(&(&bl * &kr_kt * abl.transpose()));
        noise
            .view_mut((n, 0), (n, n))
            .copy_from(&(&abl * &kr_kt * bl.transpose()));
        noise
            .view_mut((n, n), (n, n))
            .copy_from(&(&abl * &kr_kt * abl.transpose()));
        let sigma_joint = linalg::solve_discrete_lyapunov(&f_mat, &noise)?;
        let sigma_x = linalg::symmetrize(&sigma_joint.view((0, 0), (n, n)).clone_owned());

        // Input second moment: u = L x_filt, x_filt = KC x + (I-KC) x_pred + K v.
        let kc = &model.k_gain * &model.c;
        let sigma_xp = sigma_joint.view((0, n), (n, n)).clone_owned();
        let sigma_pp = sigma_joint.view((n, n), (n, n)).clone_owned();
        let cov_filt = &kc * &sigma_x * kc.transpose()
            + &kc * &sigma_xp * ikc.transpose()
            + &ikc * sigma_xp.transpose() * kc.transpose()
            + &ikc * &sigma_pp * ikc.transpose()
            + &kr_kt;
        let tr_u = (&model.l_gain * &cov_filt * model.l_gain.transpose()).trace();

        // Extraneous block: iterate the second-moment map. Pinned matrices
        // use the exact quadratic form; IID Gaussian entries use
        // E[M X M'] = scale^2 tr(X) I.
        let tdist = &view.tdist;
        let quad_a1 = |x: &DMatrix<f64>| match &tdist.a1_fixed {
            Some(m) => m * x * m.transpose(),
            None => DMatrix::identity(nt, nt) * (tdist.a1_scale * tdist.a1_scale * x.trace()),
        };
        let drive_a2 = match &tdist.a2_fixed {
            Some(m) => m * &sigma_x * m.transpose(),
            None => {
                DMatrix::identity(nt, nt) * (tdist.a2_scale * tdist.a2_scale * sigma_x.trace())
            }
        };
        let drive_b = match &tdist.b_fixed {
            Some(m) => m * m.transpose() * tr_u,
            None => DMatrix::identity(nt, nt) * (tdist.b_scale * tdist.b_scale * tr_u),
        };
        let drive = drive_a2 + drive_b + &q_t;
        let mut sigma_t = q_t.clone();
        let mut converged = false;
        for _ in 0..500 {
            let next = quad_a1(&sigma_t) + &drive;
            let delta = linalg::frobenius(&(&next - &sigma_t));
            sigma_t = next;
            if !sigma_t.iter().all(|v| v.is_finite()) {
                break;
            }
            if delta < 1e-10 * (1.0 + linalg::frobenius(&sigma_t)) {
                converged = true;
                break;
            }
        }
        if !converged || !sigma_t.iter().all(|v| v.is_finite()) {
            // No stationary second moment; fall back to a broad prior.
            sigma_t = DMatrix::identity(nt, nt) * 10.0;
        }

        let x_bar_cov = linalg::block_diag(&linalg::symmetrize(&sigma_t), &sigma_x);
        // Default filter-error model: unit covariance on the extraneous
        // block over the base steady-state prediction covariance (recovered
        // from the base DARE, which the attacker can solve from S).
        let base = StateSpaceModel::new(
            model.a.clone(),
            model.b.clone(),
            model.c.clone(),
            q_base,
            r_base,
        )?;
        let p_base = crate::lqg::solve_estimation_dare(&base)?.p;
        let filter_err_cov = linalg::block_diag(&DMatrix::identity(nt, nt), &p_base);
        Ok(AttackerPrior { x_bar_cov, filter_err_cov })
    }
}

/// Per-step grants the performance analysis explicitly hands the attacker:
/// the defender's filter gain products (attack 2 oracle mode) and, in the
/// known-C special case, the upcoming extraneous sensor map.
#[derive(Debug, Clone, Default)]
pub struct StepGrants {
    pub oracle_gain: Option<OracleGain>,
    pub known_c_next: Option<DMatrix<f64>>,
}

/// The defender-side gain matrices of one step.
#[derive(Debug, Clone)]
pub struct OracleGain {
    pub k_cal: DMatrix<f64>,
    pub ikc: DMatrix<f64>,
}

/// Draw the initial cloud: x_bar from the prior, influence exactly zero
/// (attack 1), the filter hypothesis offset by a draw from the filter error
/// model (attack 2), and C~ from the target distribution unless granted.
pub fn pf_init(
    view: &InfoView,
    n_particles: usize,
    mode: AttackMode,
    oracle_p: bool,
    prior: &AttackerPrior,
    known_c0: Option<&DMatrix<f64>>,
    rng: &mut impl Rng,
) -> Result<ParticleCloud> {
    if n_particles < 2 {
        return Err(Error::config(
            "/attack/particles",
            format!("particle count must be at least 2, got {n_particles}"),
        ));
    }
    let model = &view.model;
    let d = model.nt() + model.n();
    let x_sampler = GaussianSampler::new(prior.x_bar_cov.clone(), 0)?;
    let e_sampler = GaussianSampler::new(prior.filter_err_cov.clone(), 1)?;

    let mut particles = Vec::with_capacity(n_particles);
    for _ in 0..n_particles {
        let x_bar = x_sampler.draw(rng);
        let c_t = match known_c0 {
            Some(c) => c.clone(),
            None => sample_target(&view.tdist, model.n(), model.p(), rng)?.c_t,
        };
        let (aux, p_cal) = match mode {
            AttackMode::Attack1 => (DVector::zeros(d), None),
            AttackMode::Attack2 => {
                let aux = &x_bar - e_sampler.draw(rng);
                let p = if oracle_p { None } else { Some(prior.filter_err_cov.clone()) };
                (aux, p)
            }
        };
        particles.push(Particle { x_bar, aux, c_t, p_cal });
    }
    Ok(ParticleCloud {
        particles,
        weights: vec![1.0 / n_particles as f64; n_particles],
        mode,
        oracle_p,
        ess_threshold_frac: 0.5,
    })
}

/// Systematic resampling: one uniform offset, N evenly spaced points.
pub fn systematic_resample(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut target = rng.random::<f64>() * step;
    let mut indices = Vec::with_capacity(n);
    let mut cum = 0.0;
    for (j, w) in weights.iter().enumerate() {
        cum += w;
        while target < cum && indices.len() < n {
            indices.push(j);
            target += step;
        }
    }
    while indices.len() < n {
        indices.push(n - 1);
    }
    indices
}

/// One Bayes update of the cloud from time k to k+1.
///
/// Per particle: sample a fresh matrix tuple and process noise, propagate
/// the mode's joint dynamics with the known inputs (u_k, u_a_k and, for
/// attack 2, the transmitted measurement), then reweight by the Gaussian
/// likelihood of the newly read true measurement. Resamples systematically
/// when the effective sample size drops below the threshold.
pub fn pf_step(
    cloud: &ParticleCloud,
    view: &InfoView,
    new_y_bar: &DVector<f64>,
    u: &DVector<f64>,
    u_a: &DVector<f64>,
    grants: &StepGrants,
    rng: &mut impl Rng,
) -> Result<ParticleCloud> {
    let model = &view.model;
    let n = model.n();
    let p = model.p();
    let m_bar = model.mt() + model.m();
    if new_y_bar.len() != m_bar || u.len() != p || u_a.len() != p {
        return Err(Error::dim(format!(
            "pf_step: y has {}, u has {}, u_a has {} entries; expected {m_bar}, {p}, {p}",
            new_y_bar.len(),
            u.len(),
            u_a.len()
        )));
    }

    let w_sampler = GaussianSampler::new(model.q_cal.clone(), 0)?;
    let r_chol = linalg::cholesky(&model.r_cal, "joint R")?;
    let r_log_det = linalg::chol_log_det(&r_chol);
    let u_tot = u + u_a;

    // Attack 2 needs the measurement the defender received at time k.
    let y_a_prev = if cloud.mode == AttackMode::Attack2 {
        Some(view.y_a_hist.last().ok_or_else(|| {
            Error::numerical("attack 2 transition requires a transmitted measurement history")
        })?)
    } else {
        None
    };

    let mut next_particles = Vec::with_capacity(cloud.len());
    let mut log_w = Vec::with_capacity(cloud.len());
    for (particle, w_old) in cloud.particles.iter().zip(&cloud.weights) {
        let draw = sample_target(&view.tdist, n, p, rng)?;
        let a_stack = model.a_stacked(&draw.a1, &draw.a2);
        let b_stack = model.b_stacked(&draw.b_t);
        let c_next = match &grants.known_c_next {
            Some(c) => c.clone(),
            None => draw.c_t,
        };
        let w_bar = w_sampler.draw(rng);

        let x_bar_next = &a_stack * &particle.x_bar + &b_stack * &u_tot + &w_bar;
        let (aux_next, p_next) = match cloud.mode {
            AttackMode::Attack1 => {
                // Influence state: driven by the attack input only, no noise.
                (&a_stack * &particle.aux + &b_stack * u_a, None)
            }
            AttackMode::Attack2 => {
                let y_a = y_a_prev.expect("checked above");
                let (k_cal, ikc, p_next) = if cloud.oracle_p {
                    let grant = grants.oracle_gain.as_ref().ok_or_else(|| {
                        Error::numerical(
                            "attack 2 in oracle mode requires the per-step gain grant",
                        )
                    })?;
                    (grant.k_cal.clone(), grant.ikc.clone(), None)
                } else {
                    let p_cal = particle
                        .p_cal
                        .as_ref()
                        .ok_or_else(|| Error::numerical("full mode requires per-particle P"))?;
                    let c_stack = model.c_stacked(&particle.c_t);
                    let s_inn = &c_stack * p_cal * c_stack.transpose() + &model.r_cal;
                    let chol = linalg::cholesky(&s_inn, "particle innovation covariance")?;
                    let k_cal =
                        linalg::chol_solve_mat(&chol, &(&c_stack * p_cal)).transpose();
                    let d = p_cal.nrows();
                    let ikc = DMatrix::identity(d, d) - &k_cal * &c_stack;
                    let p_filt = linalg::symmetrize(
                        &(&ikc * p_cal * ikc.transpose()
                            + &k_cal * &model.r_cal * k_cal.transpose()),
                    );
                    let p_next = linalg::symmetrize(
                        &(&a_stack * p_filt * a_stack.transpose() + &model.q_cal),
                    );
                    (k_cal, ikc, Some(p_next))
                };
                let filt = &ikc * &particle.aux + &k_cal * y_a;
                (&a_stack * filt + &b_stack * u, p_next)
            }
        };

        let c_stack_next = model.c_stacked(&c_next);
        let resid = new_y_bar - &c_stack_next * &x_bar_next;
        let ll = stats::mvn_log_pdf(&r_chol, r_log_det, &resid);
        log_w.push(w_old.ln() + ll);
        next_particles.push(Particle {
            x_bar: x_bar_next,
            aux: aux_next,
            c_t: c_next,
            p_cal: p_next,
        });
    }

    // Normalize in log space with a max shift.
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

    let mut next = ParticleCloud {
        particles: next_particles,
        weights,
        mode: cloud.mode,
        oracle_p: cloud.oracle_p,
        ess_threshold_frac: cloud.ess_threshold_frac,
    };
    if next.ess() < next.ess_threshold_frac * next.len() as f64 {
        let idx = systematic_resample(&next.weights, rng);
        let particles = idx.iter().map(|&i| next.particles[i].clone()).collect();
        let uniform = 1.0 / next.len() as f64;
        next = ParticleCloud {
            weights: vec![uniform; next.len()],
            particles,
            mode: next.mode,
            oracle_p: next.oracle_p,
            ess_threshold_frac: next.ess_threshold_frac,
        };
    }
    Ok(next)
}

/// Attack 1 bias: s_a = -E[C_k x_bar_a | info], the particle estimate of
/// the output bias the attacker's own inputs have caused.
pub fn attack1_bias(cloud: &ParticleCloud, view: &InfoView) -> Result<DVector<f64>> {
    if cloud.mode != AttackMode::Attack1 {
        return Err(Error::numerical("attack1_bias requires an attack-1 cloud"));
    }
    let m_bar = view.model.mt() + view.model.m();
    let mut acc = DVector::zeros(m_bar);
    for (p, w) in cloud.particles.iter().zip(&cloud.weights) {
        let c_stack = view.model.c_stacked(&p.c_t);
        acc += *w * (&c_stack * &p.aux);
    }
    Ok(-acc)
}

/// Attack 2 bias: s_a = E[C_k x_hat_bar | info] - y_bar, so the defender
/// receives the particle estimate of what its filter expects to see.
pub fn attack2_bias(
    cloud: &ParticleCloud,
    view: &InfoView,
    y_bar_true: &DVector<f64>,
) -> Result<DVector<f64>> {
    if cloud.mode != AttackMode::Attack2 {
        return Err(Error::numerical("attack2_bias requires an attack-2 cloud"));
    }
    let m_bar = view.model.mt() + view.model.m();
    if y_bar_true.len() != m_bar {
        return Err(Error::dim(format!(
            "attack2_bias: y has {} entries, expected {m_bar}",
            y_bar_true.len()
        )));
    }
    let mut acc = DVector::zeros(m_bar);
    for (p, w) in cloud.particles.iter().zip(&cloud.weights) {
        let c_stack = view.model.c_stacked(&p.c_t);
        acc += *w * (&c_stack * &p.aux);
    }
    Ok(acc - y_bar_true)
}

/// Particle estimate of E[z' Sigma z | info] at a candidate transmitted
/// measurement, where z = y_a - C_k x_hat_bar. Used to check that the
/// attack-2 output minimizes every PSD quadratic of the residue.
pub fn expected_residue_quadratic(
    cloud: &ParticleCloud,
    view: &InfoView,
    y_a: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    if cloud.mode != AttackMode::Attack2 {
        return Err(Error::numerical(
            "expected_residue_quadratic requires an attack-2 cloud",
        ));
    }
    let mut acc = 0.0;
    for (p, w) in cloud.particles.iter().zip(&cloud.weights) {
        let c_stack = view.model.c_stacked(&p.c_t);
        let z = y_a - &c_stack * &p.aux;
        acc += *w * (z.transpose() * sigma * &z)[(0, 0)];
    }
    Ok(acc)
}

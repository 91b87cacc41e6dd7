//! The moving target: extraneous states with secret time-varying dynamics.
//!
//! At every step the defender samples fresh matrices (A1, A2, B~, C~) from
//! [`TargetDistribution`] and runs the stacked system
//!
//! ```text
//! [x~_{k+1}]   [A1_k  A2_k] [x~_k]   [B~_k]        [w~_k]
//! [x_{k+1} ] = [ 0     A  ] [x_k ] + [ B  ] u_k  + [w_k ]
//!
//! [y~_k]   [C~_k  0] [x~_k]   [v~_k]
//! [y_k ] = [ 0    C] [x_k ] + [v_k ]
//! ```
//!
//! The lower-left zero block means the extraneous states never influence the
//! plant, while A2 couples plant excursions into the extraneous states where
//! the added sensors can see them. A time-varying Kalman filter over the
//! stacked system produces the residue feeding a chi-squared detector.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::StateSpaceModel;
use crate::stats;

const REJECTION_LIMIT: usize = 1000;
const RANK_TOL: f64 = 1e-8;

/// Distribution of the per-step target matrices. Entries are IID zero-mean
/// Gaussians with the given standard deviations; A1 draws are rejected until
/// their spectral radius is at most `rho_max`, and C draws until full rank.
/// Any matrix can be pinned to a fixed value, which turns that coordinate of
/// the distribution into a point mass (used for known-matrix scenarios).
#[derive(Debug, Clone)]
pub struct TargetDistribution {
    pub nt: usize,
    pub mt: usize,
    pub a1_scale: f64,
    pub a2_scale: f64,
    pub b_scale: f64,
    pub c_scale: f64,
    pub rho_max: f64,
    pub a1_fixed: Option<DMatrix<f64>>,
    pub a2_fixed: Option<DMatrix<f64>>,
    pub b_fixed: Option<DMatrix<f64>>,
    pub c_fixed: Option<DMatrix<f64>>,
    /// Label of the RNG channel that feeds the sampler.
    pub seed_stream: u64,
}

impl TargetDistribution {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nt: usize,
        mt: usize,
        a1_scale: f64,
        a2_scale: f64,
        b_scale: f64,
        c_scale: f64,
        rho_max: f64,
        seed_stream: u64,
    ) -> Result<Self> {
        if nt < 1 || mt < 1 {
            return Err(Error::config(
                "/target",
                format!("target dimensions must be at least 1, got nt={nt}, mt={mt}"),
            ));
        }
        if !(rho_max > 0.0 && rho_max < 1.0) {
            return Err(Error::config(
                "/target/rho_max",
                format!("rho_max must be in (0,1), got {rho_max}"),
            ));
        }
        for (name, s) in [
            ("a1_scale", a1_scale),
            ("a2_scale", a2_scale),
            ("b_scale", b_scale),
            ("c_scale", c_scale),
        ] {
            if !(s > 0.0) {
                return Err(Error::config(
                    format!("/target/{name}"),
                    format!("scale must be positive, got {s}"),
                ));
            }
        }
        Ok(TargetDistribution {
            nt,
            mt,
            a1_scale,
            a2_scale,
            b_scale,
            c_scale,
            rho_max,
            a1_fixed: None,
            a2_fixed: None,
            b_fixed: None,
            c_fixed: None,
            seed_stream,
        })
    }

    /// Pin matrices to fixed values (a point-mass coordinate of the
    /// distribution). Shapes are checked against (nt, mt).
    pub fn with_fixed(
        mut self,
        a1: Option<DMatrix<f64>>,
        a2: Option<DMatrix<f64>>,
        b: Option<DMatrix<f64>>,
        c: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if let Some(ref m) = a1 {
            if m.nrows() != self.nt || m.ncols() != self.nt {
                return Err(Error::dim(format!(
                    "a1_fixed is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    self.nt,
                    self.nt
                )));
            }
            let rho = linalg::spectral_radius(m);
            if rho > self.rho_max {
                return Err(Error::config(
                    "/target/a1_fixed",
                    format!("spectral radius {rho:.4} exceeds rho_max {}", self.rho_max),
                ));
            }
        }
        if let Some(ref m) = c {
            if m.nrows() != self.mt || m.ncols() != self.nt {
                return Err(Error::dim(format!(
                    "c_fixed is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    self.mt,
                    self.nt
                )));
            }
        }
        self.a1_fixed = a1;
        self.a2_fixed = a2;
        self.b_fixed = b;
        self.c_fixed = c;
        Ok(self)
    }

    /// True when every matrix is pinned (fully known-matrix scenario).
    pub fn is_point_mass(&self) -> bool {
        self.a1_fixed.is_some()
            && self.a2_fixed.is_some()
            && self.b_fixed.is_some()
            && self.c_fixed.is_some()
    }
}

/// One step's realized target matrices. The stacked forms are assembled by
/// [`build_augmented`].
#[derive(Debug, Clone)]
pub struct AugmentedRealization {
    /// nt x nt extraneous transition block.
    pub a1: DMatrix<f64>,
    /// nt x n coupling from the plant state.
    pub a2: DMatrix<f64>,
    /// nt x p extraneous input block.
    pub b_t: DMatrix<f64>,
    /// mt x nt extraneous sensor map.
    pub c_t: DMatrix<f64>,
}

impl AugmentedRealization {
    pub fn nt(&self) -> usize {
        self.a1.nrows()
    }

    pub fn mt(&self) -> usize {
        self.c_t.nrows()
    }

    /// The degenerate realization of a disabled moving target: zero
    /// extraneous states and sensors, so the stacked system is the base one.
    pub fn disabled(n: usize, p: usize) -> Self {
        AugmentedRealization {
            a1: DMatrix::zeros(0, 0),
            a2: DMatrix::zeros(0, n),
            b_t: DMatrix::zeros(0, p),
            c_t: DMatrix::zeros(0, 0),
        }
    }
}

/// Draw one realization. Deterministic given the RNG state; the same seed
/// reproduces the same matrices bit for bit.
pub fn sample_target(
    dist: &TargetDistribution,
    n: usize,
    p: usize,
    rng: &mut impl Rng,
) -> Result<AugmentedRealization> {
    let a1 = match &dist.a1_fixed {
        Some(m) => m.clone(),
        None => {
            let mut accepted = None;
            for _ in 0..REJECTION_LIMIT {
                let cand = DMatrix::from_fn(dist.nt, dist.nt, |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    dist.a1_scale * z
                });
                if linalg::spectral_radius(&cand) <= dist.rho_max {
                    accepted = Some(cand);
                    break;
                }
            }
            accepted.ok_or_else(|| {
                Error::config(
                    "/target",
                    format!(
                        "A1 rejection sampling failed {REJECTION_LIMIT} times; \
                         a1_scale {} is incompatible with rho_max {}",
                        dist.a1_scale, dist.rho_max
                    ),
                )
            })?
        }
    };
    let a2 = match &dist.a2_fixed {
        Some(m) => m.clone(),
        None => DMatrix::from_fn(dist.nt, n, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            dist.a2_scale * z
        }),
    };
    let b_t = match &dist.b_fixed {
        Some(m) => m.clone(),
        None => DMatrix::from_fn(dist.nt, p, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            dist.b_scale * z
        }),
    };
    let c_t = match &dist.c_fixed {
        Some(m) => m.clone(),
        None => {
            let want = dist.mt.min(dist.nt);
            let mut accepted = None;
            for _ in 0..REJECTION_LIMIT {
                let cand = DMatrix::from_fn(dist.mt, dist.nt, |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    dist.c_scale * z
                });
                if linalg::rank(&cand, RANK_TOL) == want {
                    accepted = Some(cand);
                    break;
                }
            }
            accepted.ok_or_else(|| {
                Error::config(
                    "/target",
                    format!("C rejection sampling failed {REJECTION_LIMIT} times"),
                )
            })?
        }
    };
    Ok(AugmentedRealization { a1, a2, b_t, c_t })
}

/// Joint noise covariances of the stacked system. The lower-right blocks
/// are exactly the base model's Q and R.
#[derive(Debug, Clone)]
pub struct AugmentedNoiseSpec {
    pub q_cal: DMatrix<f64>,
    pub r_cal: DMatrix<f64>,
    pub nt: usize,
    pub mt: usize,
}

impl AugmentedNoiseSpec {
    pub fn new(base: &StateSpaceModel, q_cal: DMatrix<f64>, r_cal: DMatrix<f64>) -> Result<Self> {
        if q_cal.ncols() != q_cal.nrows() || r_cal.ncols() != r_cal.nrows() {
            return Err(Error::dim("joint covariances must be square".to_string()));
        }
        let nt = q_cal
            .nrows()
            .checked_sub(base.n)
            .ok_or_else(|| Error::dim("joint Q smaller than base Q".to_string()))?;
        let mt = r_cal
            .nrows()
            .checked_sub(base.m)
            .ok_or_else(|| Error::dim("joint R smaller than base R".to_string()))?;
        if q_cal.view((nt, nt), (base.n, base.n)) != base.q.view((0, 0), (base.n, base.n)) {
            return Err(Error::config(
                "/target/q",
                "lower-right block of joint Q must equal base Q exactly",
            ));
        }
        if r_cal.view((mt, mt), (base.m, base.m)) != base.r.view((0, 0), (base.m, base.m)) {
            return Err(Error::config(
                "/target/r",
                "lower-right block of joint R must equal base R exactly",
            ));
        }
        if !linalg::is_positive_definite(&q_cal) {
            return Err(Error::config("/target/q", "joint Q is not positive definite"));
        }
        if !linalg::is_positive_definite(&r_cal) {
            return Err(Error::config("/target/r", "joint R is not positive definite"));
        }
        Ok(AugmentedNoiseSpec { q_cal, r_cal, nt, mt })
    }

    /// Default construction: Q~ = q_t I, R~ = r_t I, zero cross blocks.
    pub fn diagonal(
        base: &StateSpaceModel,
        nt: usize,
        mt: usize,
        q_t: f64,
        r_t: f64,
    ) -> Result<Self> {
        let q_cal = linalg::block_diag(&(DMatrix::identity(nt, nt) * q_t), &base.q);
        let r_cal = linalg::block_diag(&(DMatrix::identity(mt, mt) * r_t), &base.r);
        AugmentedNoiseSpec::new(base, q_cal, r_cal)
    }
}

/// The stacked one-step model (A_k, B_k, C_k plus the joint noise),
/// directly usable by [`crate::plant::simulate_step`] on the stacked state.
pub type AugmentedStepModel = StateSpaceModel;

/// Assemble the block-structured stacked system for one step.
pub fn build_augmented(
    base: &StateSpaceModel,
    real: &AugmentedRealization,
    noise: &AugmentedNoiseSpec,
) -> Result<AugmentedStepModel> {
    let nt = real.nt();
    let mt = real.mt();
    if real.a2.ncols() != base.n || real.a2.nrows() != nt {
        return Err(Error::dim(format!(
            "A2 is {}x{}, expected {}x{}",
            real.a2.nrows(),
            real.a2.ncols(),
            nt,
            base.n
        )));
    }
    if real.b_t.nrows() != nt || real.b_t.ncols() != base.p {
        return Err(Error::dim(format!(
            "target B is {}x{}, expected {}x{}",
            real.b_t.nrows(),
            real.b_t.ncols(),
            nt,
            base.p
        )));
    }
    if real.c_t.ncols() != nt || real.c_t.nrows() != mt {
        return Err(Error::dim(format!(
            "target C is {}x{}, expected {}x{}",
            real.c_t.nrows(),
            real.c_t.ncols(),
            mt,
            nt
        )));
    }
    if noise.nt != nt || noise.mt != mt {
        return Err(Error::dim(format!(
            "noise spec sized for nt={}, mt={}; realization has nt={nt}, mt={mt}",
            noise.nt, noise.mt
        )));
    }

    let dim = nt + base.n;
    let mut a_cal = DMatrix::zeros(dim, dim);
    a_cal.view_mut((0, 0), (nt, nt)).copy_from(&real.a1);
    a_cal.view_mut((0, nt), (nt, base.n)).copy_from(&real.a2);
    a_cal.view_mut((nt, nt), (base.n, base.n)).copy_from(&base.a);

    let mut b_cal = DMatrix::zeros(dim, base.p);
    b_cal.view_mut((0, 0), (nt, base.p)).copy_from(&real.b_t);
    b_cal.view_mut((nt, 0), (base.n, base.p)).copy_from(&base.b);

    let mut c_cal = DMatrix::zeros(mt + base.m, dim);
    c_cal.view_mut((0, 0), (mt, nt)).copy_from(&real.c_t);
    c_cal
        .view_mut((mt, nt), (base.m, base.n))
        .copy_from(&base.c);

    StateSpaceModel::new(a_cal, b_cal, c_cal, noise.q_cal.clone(), noise.r_cal.clone())
}

/// State of the time-varying Kalman filter: the one-step prediction, its
/// covariance, and the gain matrices from the latest update (the quantities
/// an analysis oracle may grant to the adversary).
#[derive(Debug, Clone)]
pub struct TvFilterState {
    /// Predicted mean [x~_hat; x_hat]_{k|k-1}.
    pub x_bar_hat: DVector<f64>,
    /// Prediction covariance P_k.
    pub p_cal: DMatrix<f64>,
    /// Gain K_k of the most recent update (empty before the first step).
    pub k_cal: DMatrix<f64>,
    /// (I - K_k C_k) of the most recent update.
    pub ikc: DMatrix<f64>,
}

impl TvFilterState {
    pub fn new(x_bar_hat: DVector<f64>, p_cal: DMatrix<f64>) -> Result<Self> {
        let d = x_bar_hat.len();
        if p_cal.nrows() != d || p_cal.ncols() != d {
            return Err(Error::dim(format!(
                "filter covariance is {}x{}, state has {d} entries",
                p_cal.nrows(),
                p_cal.ncols()
            )));
        }
        if !linalg::is_positive_definite(&p_cal) {
            return Err(Error::numerical(
                "initial filter covariance is not positive definite",
            ));
        }
        Ok(TvFilterState {
            x_bar_hat,
            p_cal,
            k_cal: DMatrix::zeros(d, 0),
            ikc: DMatrix::identity(d, d),
        })
    }
}

/// One measurement + time update of the time-varying filter against the
/// step's realized matrices. `u_defender` is the input the controller
/// computed from the base filter (the stacked filter treats it as known).
///
/// The covariance is updated in Joseph form and re-symmetrized.
pub fn tv_kalman_step(
    state: &TvFilterState,
    step: &AugmentedStepModel,
    y_bar: &DVector<f64>,
    u_defender: &DVector<f64>,
) -> Result<TvFilterState> {
    let d = step.n;
    if state.x_bar_hat.len() != d || y_bar.len() != step.m || u_defender.len() != step.p {
        return Err(Error::dim(format!(
            "tv_kalman_step: state {}, y {}, u {} vs model n={}, m={}, p={}",
            state.x_bar_hat.len(),
            y_bar.len(),
            u_defender.len(),
            d,
            step.m,
            step.p
        )));
    }
    let s_inn = &step.c * &state.p_cal * step.c.transpose() + &step.r;
    let chol = nalgebra::Cholesky::new(s_inn.clone()).ok_or_else(|| {
        Error::numerical(format!(
            "innovation covariance is not positive definite (condition number {:.3e})",
            linalg::condition_number(&s_inn)
        ))
    })?;
    // K = P C' S^{-1}
    let k_cal = linalg::chol_solve_mat(&chol, &(&step.c * &state.p_cal)).transpose();
    let ikc = DMatrix::identity(d, d) - &k_cal * &step.c;

    let filtered = &ikc * &state.x_bar_hat + &k_cal * y_bar;
    let p_filtered = linalg::symmetrize(
        &(&ikc * &state.p_cal * ikc.transpose() + &k_cal * &step.r * k_cal.transpose()),
    );

    let x_next = &step.a * filtered + &step.b * u_defender;
    let p_next = linalg::symmetrize(&(&step.a * p_filtered * step.a.transpose() + &step.q));

    Ok(TvFilterState {
        x_bar_hat: x_next,
        p_cal: p_next,
        k_cal,
        ikc,
    })
}

/// Residue z_k = y_bar - C_k x_bar_hat and its covariance
/// P_bar_k = C_k P_k C_k' + R.
pub fn residue(
    y_bar: &DVector<f64>,
    state: &TvFilterState,
    step: &AugmentedStepModel,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if y_bar.len() != step.m || state.x_bar_hat.len() != step.n {
        return Err(Error::dim(format!(
            "residue: y has {} entries, state {}, model m={}, n={}",
            y_bar.len(),
            state.x_bar_hat.len(),
            step.m,
            step.n
        )));
    }
    let z = y_bar - &step.c * &state.x_bar_hat;
    let p_bar = linalg::symmetrize(&(&step.c * &state.p_cal * step.c.transpose() + &step.r));
    Ok((z, p_bar))
}

/// g = z' P_bar^{-1} z through a Cholesky solve.
pub fn chi2_statistic(z: &DVector<f64>, p_bar: &DMatrix<f64>) -> Result<f64> {
    if p_bar.nrows() != z.len() || p_bar.ncols() != z.len() {
        return Err(Error::dim(format!(
            "chi2_statistic: z has {} entries, P_bar is {}x{}",
            z.len(),
            p_bar.nrows(),
            p_bar.ncols()
        )));
    }
    let chol = nalgebra::Cholesky::new(p_bar.clone()).ok_or_else(|| {
        Error::numerical(format!(
            "residue covariance is not positive definite (condition number {:.3e})",
            linalg::condition_number(p_bar)
        ))
    })?;
    let mut sol = z.clone();
    chol.solve_mut(&mut sol);
    Ok(z.dot(&sol))
}

/// eta with P(chi2_dof > eta) = alpha.
pub fn chi2_threshold(alpha: f64, dof: usize) -> Result<f64> {
    stats::chi2_upper_quantile(alpha, dof)
}

/// Detector configuration: target false-alarm rate, threshold, and the
/// degrees of freedom of the residue.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub eta: f64,
    pub dof: usize,
}

impl DetectorConfig {
    pub fn new(alpha: f64, dof: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config(
                "/detector/alpha",
                format!("alpha must be in (0,1), got {alpha}"),
            ));
        }
        let eta = chi2_threshold(alpha, dof)?;
        Ok(DetectorConfig { alpha, eta, dof })
    }
}

/// Alarm if and only if g strictly exceeds the threshold.
pub fn detect(g: f64, cfg: &DetectorConfig) -> bool {
    g > cfg.eta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg;
    use crate::plant::{simulate_step, GaussianSampler};
    use crate::rng::{StreamFactory, StreamId};
    use proptest::prelude::*;

    fn base_2d() -> StateSpaceModel {
        StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]),
            DMatrix::identity(2, 2) * 0.1,
        )
        .unwrap()
    }

    fn default_dist() -> TargetDistribution {
        TargetDistribution::new(2, 2, 0.25, 0.4, 0.2, 1.0, 0.9, 0).unwrap()
    }

    fn bits_of(m: &DMatrix<f64>) -> Vec<u64> {
        m.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let dist = default_dist();
        let f = StreamFactory::new(7, 0);
        let r1 = sample_target(&dist, 2, 1, &mut f.stream(StreamId::Target)).unwrap();
        let r2 = sample_target(&dist, 2, 1, &mut f.stream(StreamId::Target)).unwrap();
        assert_eq!(bits_of(&r1.a1), bits_of(&r2.a1));
        assert_eq!(bits_of(&r1.a2), bits_of(&r2.a2));
        assert_eq!(bits_of(&r1.b_t), bits_of(&r2.b_t));
        assert_eq!(bits_of(&r1.c_t), bits_of(&r2.c_t));

        let g = StreamFactory::new(8, 0);
        let r3 = sample_target(&dist, 2, 1, &mut g.stream(StreamId::Target)).unwrap();
        assert_ne!(bits_of(&r1.a1), bits_of(&r3.a1));
    }

    #[test]
    fn tiny_a1_scale_passes_radius_check() {
        let dist = TargetDistribution::new(2, 2, 1e-12, 0.4, 0.2, 1.0, 0.9, 0).unwrap();
        let f = StreamFactory::new(9, 0);
        let real = sample_target(&dist, 2, 1, &mut f.stream(StreamId::Target)).unwrap();
        assert!(real.a1.amax() < 1e-10);
        assert!(linalg::spectral_radius(&real.a1) <= 0.9);
    }

    #[test]
    fn incompatible_scales_fail_as_config_error() {
        // A 2x2 Gaussian with sd 50 virtually never lands below radius 0.9.
        let dist = TargetDistribution::new(2, 2, 50.0, 0.4, 0.2, 1.0, 0.9, 0).unwrap();
        let f = StreamFactory::new(10, 0);
        let err = sample_target(&dist, 2, 1, &mut f.stream(StreamId::Target)).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn a2_entry_variance_matches_scale() {
        let dist = default_dist();
        let f = StreamFactory::new(11, 0);
        let mut rng = f.stream(StreamId::Target);
        let mut sq = 0.0;
        let mut count = 0usize;
        for _ in 0..10_000 {
            let real = sample_target(&dist, 2, 1, &mut rng).unwrap();
            for v in real.a2.iter() {
                sq += v * v;
                count += 1;
            }
        }
        let var = sq / count as f64;
        let rel = (var - dist.a2_scale * dist.a2_scale).abs() / (dist.a2_scale * dist.a2_scale);
        assert!(rel < 0.05, "relative variance error {rel}");
    }

    #[test]
    fn sampled_c_has_full_rank() {
        let dist = default_dist();
        let f = StreamFactory::new(12, 0);
        let mut rng = f.stream(StreamId::Target);
        for _ in 0..100 {
            let real = sample_target(&dist, 2, 1, &mut rng).unwrap();
            assert_eq!(linalg::rank(&real.c_t, RANK_TOL), 2);
        }
    }

    #[test]
    fn augmented_blocks_scalar_case() {
        let base = StateSpaceModel::new(
            DMatrix::from_row_slice(1, 1, &[0.8]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[0.3]),
            DMatrix::from_row_slice(1, 1, &[0.2]),
        )
        .unwrap();
        let real = AugmentedRealization {
            a1: DMatrix::from_row_slice(1, 1, &[0.5]),
            a2: DMatrix::from_row_slice(1, 1, &[0.7]),
            b_t: DMatrix::from_row_slice(1, 1, &[0.1]),
            c_t: DMatrix::from_row_slice(1, 1, &[2.0]),
        };
        let noise = AugmentedNoiseSpec::diagonal(&base, 1, 1, 1.0, 1.0).unwrap();
        let step = build_augmented(&base, &real, &noise).unwrap();
        assert_eq!(step.a, DMatrix::from_row_slice(2, 2, &[0.5, 0.7, 0.0, 0.8]));
        assert_eq!(step.b, DMatrix::from_row_slice(2, 1, &[0.1, 1.0]));
        assert_eq!(step.c, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert_eq!(step.a[(1, 0)], 0.0);
    }

    #[test]
    fn zero_realization_reduces_to_noise_driven_extraneous_states() {
        let base = base_2d();
        let real = AugmentedRealization {
            a1: DMatrix::zeros(2, 2),
            a2: DMatrix::zeros(2, 2),
            b_t: DMatrix::zeros(2, 1),
            c_t: DMatrix::zeros(2, 2),
        };
        let noise = AugmentedNoiseSpec::diagonal(&base, 2, 2, 1.0, 1.0).unwrap();
        let step = build_augmented(&base, &real, &noise).unwrap();
        let x_bar = DVector::from_row_slice(&[1.0, -2.0, 0.5, 3.0]);
        let u = DVector::from_row_slice(&[0.7]);
        let w_bar = DVector::from_row_slice(&[0.1, 0.2, 0.3, 0.4]);
        let next = simulate_step(&step, &x_bar, &u, &w_bar).unwrap();
        // Upper block: x~' = w~.
        assert_eq!(next[0], 0.1);
        assert_eq!(next[1], 0.2);
        // Lower block: the base plant.
        let base_next = simulate_step(
            &base,
            &DVector::from_row_slice(&[0.5, 3.0]),
            &u,
            &DVector::from_row_slice(&[0.3, 0.4]),
        )
        .unwrap();
        assert_eq!(next[2], base_next[0]);
        assert_eq!(next[3], base_next[1]);
    }

    #[test]
    fn stacked_simulation_reproduces_base_trajectory_bitwise() {
        // The zero lower-left block means the x-trajectory cannot depend on
        // the extraneous states, even bit for bit.
        let base = base_2d();
        let dist = default_dist();
        let noise = AugmentedNoiseSpec::diagonal(&base, 2, 2, 1.0, 1.0).unwrap();
        let f = StreamFactory::new(13, 0);
        let mut trng = f.stream(StreamId::Target);
        let mut wrng = f.stream(StreamId::Process);
        let ws = GaussianSampler::new(noise.q_cal.clone(), 0).unwrap();

        let mut x_bar = DVector::from_row_slice(&[0.3, -0.4, 1.0, 2.0]);
        let mut x_base = DVector::from_row_slice(&[1.0, 2.0]);
        let u = DVector::from_row_slice(&[0.5]);
        for _ in 0..100 {
            let real = sample_target(&dist, 2, 1, &mut trng).unwrap();
            let step = build_augmented(&base, &real, &noise).unwrap();
            let w_bar = ws.draw(&mut wrng);
            x_bar = simulate_step(&step, &x_bar, &u, &w_bar).unwrap();
            let w_base = DVector::from_row_slice(&[w_bar[2], w_bar[3]]);
            x_base = simulate_step(&base, &x_base, &u, &w_base).unwrap();
            assert_eq!(x_bar[2].to_bits(), x_base[0].to_bits());
            assert_eq!(x_bar[3].to_bits(), x_base[1].to_bits());
        }
    }

    #[test]
    fn disabled_target_is_the_base_model() {
        let base = base_2d();
        let real = AugmentedRealization::disabled(2, 1);
        let noise = AugmentedNoiseSpec::new(&base, base.q.clone(), base.r.clone()).unwrap();
        let step = build_augmented(&base, &real, &noise).unwrap();
        assert_eq!(step.a, base.a);
        assert_eq!(step.b, base.b);
        assert_eq!(step.c, base.c);
    }

    #[test]
    fn tv_step_hand_case() {
        // Scalar blocks, all matrices 1, joint covariances I, P0 = I.
        let base = StateSpaceModel::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let real = AugmentedRealization {
            a1: DMatrix::from_row_slice(1, 1, &[1.0]),
            a2: DMatrix::from_row_slice(1, 1, &[1.0]),
            b_t: DMatrix::from_row_slice(1, 1, &[1.0]),
            c_t: DMatrix::from_row_slice(1, 1, &[1.0]),
        };
        let noise = AugmentedNoiseSpec::diagonal(&base, 1, 1, 1.0, 1.0).unwrap();
        let step = build_augmented(&base, &real, &noise).unwrap();
        let state = TvFilterState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let y_bar = DVector::from_row_slice(&[1.0, 2.0]);
        let u = DVector::from_row_slice(&[0.3]);
        let next = tv_kalman_step(&state, &step, &y_bar, &u).unwrap();

        // Hand evaluation: K0 = I (2I)^{-1} = 0.5 I; filtered mean
        // (0.5, 1.0); A = [[1,1],[0,1]] so prediction (1.5, 1.0) + B u
        // gives (1.8, 1.3).
        assert!((next.k_cal - DMatrix::identity(2, 2) * 0.5).amax() < 1e-12);
        assert!((next.x_bar_hat[0] - 1.8).abs() < 1e-12);
        assert!((next.x_bar_hat[1] - 1.3).abs() < 1e-12);
        // P1 = A (0.5 I) A' + Q = [[2, 0.5], [0.5, 1.5]].
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.5]);
        assert!((next.p_cal - expect).amax() < 1e-12);
    }

    #[test]
    fn tv_step_zero_c_is_pure_prediction() {
        let base = base_2d();
        let real = AugmentedRealization {
            a1: DMatrix::identity(2, 2) * 0.5,
            a2: DMatrix::zeros(2, 2),
            b_t: DMatrix::zeros(2, 1),
            c_t: DMatrix::zeros(2, 2),
        };
        let noise = AugmentedNoiseSpec::diagonal(&base, 2, 2, 1.0, 1.0).unwrap();
        let mut step = build_augmented(&base, &real, &noise).unwrap();
        // Zero the base sensor block too: a fully blind update.
        step.c = DMatrix::zeros(4, 4);
        let x0 = DVector::from_row_slice(&[0.1, 0.2, 0.3, 0.4]);
        let state = TvFilterState::new(x0.clone(), DMatrix::identity(4, 4)).unwrap();
        let next = tv_kalman_step(&state, &step, &DVector::zeros(4), &DVector::zeros(1)).unwrap();
        assert_eq!(next.k_cal.amax(), 0.0);
        let expect = &step.a * &x0;
        assert!((next.x_bar_hat - expect).amax() < 1e-14);
        let p_expect = &step.a * DMatrix::identity(4, 4) * step.a.transpose() + &step.q;
        assert!((next.p_cal - p_expect).amax() < 1e-12);
    }

    #[test]
    fn repeated_realization_converges_to_dare_fixed_point() {
        let base = base_2d();
        let dist = default_dist();
        let f = StreamFactory::new(21, 0);
        let real = sample_target(&dist, 2, 1, &mut f.stream(StreamId::Target)).unwrap();
        let noise = AugmentedNoiseSpec::diagonal(&base, 2, 2, 1.0, 1.0).unwrap();
        let step = build_augmented(&base, &real, &noise).unwrap();

        let oracle = lqg::solve_estimation_dare(&step).unwrap();

        let mut state =
            TvFilterState::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        for _ in 0..2000 {
            state = tv_kalman_step(&state, &step, &DVector::zeros(4), &DVector::zeros(1)).unwrap();
        }
        let diff = linalg::frobenius(&(&state.p_cal - &oracle.p));
        assert!(diff < 1e-8, "covariance gap {diff}");
    }

    #[test]
    fn residue_zero_when_measurement_matches_prediction() {
        let base = base_2d();
        let dist = default_dist();
        let f = StreamFactory::new(22, 0);
        let real = sample_target(&dist, 2, 1, &mut f.stream(StreamId::Target)).unwrap();
        let noise = AugmentedNoiseSpec::diagonal(&base, 2, 2, 1.0, 1.0).unwrap();
        let step = build_augmented(&base, &real, &noise).unwrap();
        let state = TvFilterState::new(
            DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]),
            DMatrix::identity(4, 4),
        )
        .unwrap();
        let y_bar = &step.c * &state.x_bar_hat;
        let (z, p_bar) = residue(&y_bar, &state, &step).unwrap();
        assert!(z.amax() < 1e-14);
        assert!(linalg::is_positive_definite(&p_bar));
    }

    #[test]
    fn chi2_statistic_hand_cases() {
        assert_eq!(
            chi2_statistic(&DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap(),
            0.0
        );
        let g = chi2_statistic(
            &DVector::from_row_slice(&[3.0, 4.0]),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!((g - 25.0).abs() < 1e-12);
    }

    #[test]
    fn detect_is_strict() {
        let cfg = DetectorConfig::new(0.05, 2).unwrap();
        assert!(!detect(0.0, &cfg));
        assert!(!detect(cfg.eta, &cfg));
        assert!(detect(cfg.eta + 1e-9, &cfg));
        assert!((cfg.eta - 5.991464547107982).abs() < 1e-6);
    }

    /// Shared H0 run: simulate the augmented loop (u = 0) and collect
    /// residues, statistics, and the average residue covariance.
    fn h0_run(steps: usize, seed: u64) -> (Vec<DVector<f64>>, Vec<f64>, DMatrix<f64>) {
        let base = base_2d();
        let dist = default_dist();
        let noise = AugmentedNoiseSpec::diagonal(&base, 2, 2, 0.1, 0.1).unwrap();
        let f = StreamFactory::new(seed, 0);
        let mut trng = f.stream(StreamId::Target);
        let mut wrng = f.stream(StreamId::Process);
        let mut vrng = f.stream(StreamId::Sensor);
        let mut irng = f.stream(StreamId::InitState);
        let ws = GaussianSampler::new(noise.q_cal.clone(), 0).unwrap();
        let vs = GaussianSampler::new(noise.r_cal.clone(), 1).unwrap();

        // Exact stationary prior for the open-loop plant (u = 0).
        let sigma_x = linalg::solve_discrete_lyapunov(&base.a, &base.q).unwrap();
        let x0_sampler = GaussianSampler::new(sigma_x.clone(), 2).unwrap();
        let mut x = x0_sampler.draw(&mut irng);
        let xt_sampler = GaussianSampler::new(DMatrix::identity(2, 2), 3).unwrap();
        let mut xt = xt_sampler.draw(&mut irng);

        let p0 = linalg::block_diag(&DMatrix::identity(2, 2), &sigma_x);
        let mut state = TvFilterState::new(DVector::zeros(4), p0).unwrap();
        let u = DVector::zeros(1);

        let mut zs = Vec::with_capacity(steps);
        let mut gs = Vec::with_capacity(steps);
        let mut pbar_acc = DMatrix::<f64>::zeros(4, 4);
        for _ in 0..steps {
            let real = sample_target(&dist, 2, 1, &mut trng).unwrap();
            let step = build_augmented(&base, &real, &noise).unwrap();
            let v_bar = vs.draw(&mut vrng);
            let y_bar = &step.c * linalg::vstack_vec(&xt, &x) + v_bar;
            let (z, p_bar) = residue(&y_bar, &state, &step).unwrap();
            gs.push(chi2_statistic(&z, &p_bar).unwrap());
            pbar_acc += &p_bar;
            zs.push(z);

            state = tv_kalman_step(&state, &step, &y_bar, &u).unwrap();
            let w_bar = ws.draw(&mut wrng);
            let stacked = simulate_step(&step, &linalg::vstack_vec(&xt, &x), &u, &w_bar).unwrap();
            xt = stacked.rows(0, 2).clone_owned();
            x = stacked.rows(2, 2).clone_owned();
        }
        pbar_acc /= steps as f64;
        (zs, gs, pbar_acc)
    }

    #[test]
    fn h0_residue_covariance_matches_average_p_bar() {
        let steps = 100_000;
        let (zs, _, pbar_avg) = h0_run(steps, 31);
        let mut cov = DMatrix::<f64>::zeros(4, 4);
        for z in &zs {
            cov += z * z.transpose();
        }
        cov /= steps as f64;
        let rel = linalg::frobenius(&(&cov - &pbar_avg)) / linalg::frobenius(&pbar_avg);
        assert!(rel < 0.05, "relative deviation {rel}");
    }

    #[test]
    fn h0_chi2_moments() {
        let steps = 100_000;
        let (_, gs, _) = h0_run(steps, 37);
        let dof = 4.0;
        let mean = crate::stats::mean(&gs);
        let var = crate::stats::variance(&gs);
        assert!((mean - dof).abs() / dof < 0.02, "mean {mean}");
        assert!((var - 2.0 * dof).abs() / (2.0 * dof) < 0.05, "var {var}");
    }

    #[test]
    fn h0_alarm_rate_in_wilson_interval() {
        let steps = 100_000;
        let (_, gs, _) = h0_run(steps, 41);
        let cfg = DetectorConfig::new(0.05, 4).unwrap();
        let alarms = gs.iter().filter(|&&g| detect(g, &cfg)).count() as u64;
        let (lo, hi) = crate::stats::wilson_interval(alarms, steps as u64, crate::stats::Z_99);
        assert!(
            lo <= cfg.alpha && cfg.alpha <= hi,
            "alpha {} outside [{lo}, {hi}]",
            cfg.alpha
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn augmented_block_structure_invariants(seed in 0u64..1000) {
            let base = base_2d();
            let dist = default_dist();
            let noise = AugmentedNoiseSpec::diagonal(&base, 2, 2, 0.5, 0.5).unwrap();
            let f = StreamFactory::new(seed, 0);
            let real = sample_target(&dist, 2, 1, &mut f.stream(StreamId::Target)).unwrap();
            let step = build_augmented(&base, &real, &noise).unwrap();

            // Lower-left transition block exactly zero, lower-right equals A,
            // sensor map block-diagonal, lower input block equals B.
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert_eq!(step.a[(2 + i, j)], 0.0);
                    prop_assert_eq!(step.a[(2 + i, 2 + j)], base.a[(i, j)]);
                    prop_assert_eq!(step.c[(i, 2 + j)], 0.0);
                    prop_assert_eq!(step.c[(2 + i, j)], 0.0);
                    prop_assert_eq!(step.c[(2 + i, 2 + j)], base.c[(i, j)]);
                }
                prop_assert_eq!(step.b[(2 + i, 0)], base.b[(i, 0)]);
            }
        }
    }
}

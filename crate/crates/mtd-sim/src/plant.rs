//! The base discrete-time LTI plant with Gaussian process and sensor noise:
//!
//! ```text
//! x_{k+1} = A x_k + B u_k + w_k,   w_k ~ N(0, Q)
//! y_k     = C x_k + v_k,           v_k ~ N(0, R)
//! ```

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Rank tolerance for the PBH subspace tests.
const PBH_RANK_TOL: f64 = 1e-8;

/// The base plant (A, B, C, Q, R) with cached dimensions.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
    pub m: usize,
}

impl StateSpaceModel {
    /// Build a model, rejecting inconsistent shapes. Property checks
    /// (definiteness, detectability, ...) live in [`validate_model`].
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dim(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::dim(format!("C has {} cols, expected {n}", c.ncols())));
        }
        let p = b.ncols();
        let m = c.nrows();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::dim(format!(
                "Q is {}x{}, expected {n}x{n}",
                q.nrows(),
                q.ncols()
            )));
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::dim(format!(
                "R is {}x{}, expected {m}x{m}",
                r.nrows(),
                r.ncols()
            )));
        }
        if n == 0 || m == 0 {
            return Err(Error::dim("state and output dimensions must be positive"));
        }
        Ok(StateSpaceModel { a, b, c, q, r, n, p, m })
    }
}

/// One named model check of a [`ValidationReport`].
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate_model`]: a list of pass/fail checks.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// PBH rank test over the unstable eigenvalues of A. `cols` is the matrix
/// adjoined column-wise for stabilizability, `rows` the one adjoined
/// row-wise for detectability.
fn pbh_unstable_ok(a: &DMatrix<f64>, other: &DMatrix<f64>, by_rows: bool) -> (bool, String) {
    let n = a.nrows();
    let eigs = a.complex_eigenvalues();
    for lambda in eigs.iter() {
        if lambda.norm() < 1.0 - PBH_RANK_TOL {
            continue;
        }
        let a_c = a.map(|v| Complex::new(v, 0.0));
        let other_c = other.map(|v| Complex::new(v, 0.0));
        let shifted = DMatrix::<Complex<f64>>::identity(n, n) * *lambda - a_c;
        let stacked = if by_rows {
            // [lambda I - A; C]
            let mut s = DMatrix::zeros(n + other.nrows(), n);
            s.view_mut((0, 0), (n, n)).copy_from(&shifted);
            s.view_mut((n, 0), (other.nrows(), n)).copy_from(&other_c);
            s
        } else {
            // [lambda I - A, B]
            let mut s = DMatrix::zeros(n, n + other.ncols());
            s.view_mut((0, 0), (n, n)).copy_from(&shifted);
            s.view_mut((0, n), (n, other.ncols())).copy_from(&other_c);
            s
        };
        if linalg::rank_complex(&stacked, PBH_RANK_TOL) < n {
            return (
                false,
                format!(
                    "PBH rank deficient at eigenvalue {:.6}{:+.6}i (|lambda| = {:.6})",
                    lambda.re,
                    lambda.im,
                    lambda.norm()
                ),
            );
        }
    }
    (true, "all unstable modes covered".into())
}

/// Check positive definiteness of Q and R, detectability of (A, C), and
/// stabilizability of (A, B) and (A, Q^{1/2}).
///
/// Shape inconsistencies are structural errors; property failures are
/// reported per check with the failing eigenvalue or matrix named.
pub fn validate_model(model: &StateSpaceModel) -> Result<ValidationReport> {
    let mut checks = Vec::new();

    let q_pd = linalg::is_positive_definite(&model.q);
    checks.push(Check {
        name: "q_positive_definite",
        passed: q_pd,
        detail: if q_pd { "Cholesky succeeded".into() } else { "Q is not positive definite".into() },
    });
    let r_pd = linalg::is_positive_definite(&model.r);
    checks.push(Check {
        name: "r_positive_definite",
        passed: r_pd,
        detail: if r_pd { "Cholesky succeeded".into() } else { "R is not positive definite".into() },
    });

    let (det_ok, det_detail) = pbh_unstable_ok(&model.a, &model.c, true);
    checks.push(Check {
        name: "detectability_a_c",
        passed: det_ok,
        detail: det_detail,
    });

    let (stab_ok, stab_detail) = pbh_unstable_ok(&model.a, &model.b, false);
    checks.push(Check {
        name: "stabilizability_a_b",
        passed: stab_ok,
        detail: stab_detail,
    });

    // (A, Q^{1/2}) stabilizability needs a square root of Q; only meaningful
    // when Q is PD, otherwise carry the definiteness failure forward.
    if q_pd {
        let q_half = linalg::cholesky(&model.q, "Q")?.l();
        let (qs_ok, qs_detail) = pbh_unstable_ok(&model.a, &q_half, false);
        checks.push(Check {
            name: "stabilizability_a_qhalf",
            passed: qs_ok,
            detail: qs_detail,
        });
    } else {
        checks.push(Check {
            name: "stabilizability_a_qhalf",
            passed: false,
            detail: "skipped: Q is not positive definite".into(),
        });
    }

    Ok(ValidationReport { checks })
}

/// One plant transition: A x + B u + w.
pub fn simulate_step(
    model: &StateSpaceModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != model.n || u.len() != model.p || w.len() != model.n {
        return Err(Error::dim(format!(
            "simulate_step: x has {}, u has {}, w has {} entries; model expects n={}, p={}",
            x.len(),
            u.len(),
            w.len(),
            model.n,
            model.p
        )));
    }
    Ok(&model.a * x + &model.b * u + w)
}

/// One measurement: C x + v.
pub fn measure(model: &StateSpaceModel, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != model.n || v.len() != model.m {
        return Err(Error::dim(format!(
            "measure: x has {}, v has {} entries; model expects n={}, m={}",
            x.len(),
            v.len(),
            model.n,
            model.m
        )));
    }
    Ok(&model.c * x + v)
}

/// Draws correlated zero-mean Gaussian vectors with a fixed covariance.
/// `stream_id` labels which harness noise channel feeds it.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    pub covariance: DMatrix<f64>,
    pub cholesky_factor: DMatrix<f64>,
    pub stream_id: u64,
}

impl GaussianSampler {
    pub fn new(covariance: DMatrix<f64>, stream_id: u64) -> Result<Self> {
        if covariance.nrows() != covariance.ncols() {
            return Err(Error::dim("covariance must be square"));
        }
        let chol = linalg::cholesky(&covariance, "sampler covariance")?;
        Ok(GaussianSampler {
            cholesky_factor: chol.l(),
            covariance,
            stream_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// L z with z a standard-normal vector from the caller's stream.
    pub fn draw(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.cholesky_factor * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamFactory, StreamId};
    use proptest::prelude::*;

    fn scalar_model(a: f64, b: f64, c: f64, q: f64, r: f64) -> StateSpaceModel {
        StateSpaceModel::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            DMatrix::from_row_slice(1, 1, &[b]),
            DMatrix::from_row_slice(1, 1, &[c]),
            DMatrix::from_row_slice(1, 1, &[q]),
            DMatrix::from_row_slice(1, 1, &[r]),
        )
        .unwrap()
    }

    /// Naive triple-loop mat-vec, independent of nalgebra's kernels.
    fn naive_affine(
        a: &DMatrix<f64>,
        x: &DVector<f64>,
        b: &DMatrix<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(a.nrows());
        for i in 0..a.nrows() {
            let mut acc = 0.0;
            for j in 0..a.ncols() {
                acc += a[(i, j)] * x[j];
            }
            for j in 0..b.ncols() {
                acc += b[(i, j)] * u[j];
            }
            out[i] = acc + w[i];
        }
        out
    }

    #[test]
    fn validate_passes_stable_scalar() {
        let model = scalar_model(0.5, 1.0, 1.0, 1.0, 1.0);
        let report = validate_model(&model).unwrap();
        assert!(report.all_passed(), "{:?}", report.failures());
    }

    #[test]
    fn validate_fails_unstable_without_input() {
        let model = scalar_model(2.0, 0.0, 1.0, 1.0, 1.0);
        let report = validate_model(&model).unwrap();
        let stab = report
            .checks
            .iter()
            .find(|c| c.name == "stabilizability_a_b")
            .unwrap();
        assert!(!stab.passed);
        assert!(stab.detail.contains("2.0"), "detail: {}", stab.detail);
        // Detectability still fine: C = 1 sees the unstable mode.
        assert!(report.checks.iter().find(|c| c.name == "detectability_a_c").unwrap().passed);
    }

    #[test]
    fn validate_detectability_failure_names_eigenvalue() {
        // lambda = 2 is unobservable through C = [0 1]; by the hand PBH rank
        // oracle, [2I - A; C] = [[0,0],[0,1.5],[0,1]] has rank 1 < 2.
        let model = StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let report = validate_model(&model).unwrap();
        let det = report.checks.iter().find(|c| c.name == "detectability_a_c").unwrap();
        assert!(!det.passed);
        assert!(det.detail.contains("2.0"), "detail: {}", det.detail);
    }

    #[test]
    fn validate_rejects_indefinite_q() {
        let model = scalar_model(0.5, 1.0, 1.0, -1.0, 1.0);
        let report = validate_model(&model).unwrap();
        assert!(!report.checks.iter().find(|c| c.name == "q_positive_definite").unwrap().passed);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let err = StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn simulate_step_identity_dynamics() {
        let model = StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let x = DVector::from_row_slice(&[1.0, 2.0]);
        let out = simulate_step(&model, &x, &DVector::from_row_slice(&[7.0]), &DVector::zeros(2))
            .unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn simulate_step_scalar_hand_case() {
        let model = scalar_model(0.9, 1.0, 1.0, 1.0, 1.0);
        let out = simulate_step(
            &model,
            &DVector::from_row_slice(&[1.0]),
            &DVector::from_row_slice(&[1.0]),
            &DVector::from_row_slice(&[0.5]),
        )
        .unwrap();
        assert!((out[0] - 2.4).abs() < 1e-15);
    }

    #[test]
    fn simulate_step_matches_naive_matmul() {
        let f = StreamFactory::new(11, 0);
        let mut rng = f.stream(StreamId::Custom(0));
        for _ in 0..20 {
            let a = DMatrix::from_fn(4, 4, |_, _| StandardNormal.sample(&mut rng));
            let b = DMatrix::from_fn(4, 2, |_, _| StandardNormal.sample(&mut rng));
            let model = StateSpaceModel::new(
                a.clone(),
                b.clone(),
                DMatrix::identity(4, 4),
                DMatrix::identity(4, 4),
                DMatrix::identity(4, 4),
            )
            .unwrap();
            let x = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let u = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let w = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let fast = simulate_step(&model, &x, &u, &w).unwrap();
            let slow = naive_affine(&a, &x, &b, &u, &w);
            assert!((fast - slow).amax() < 1e-12);
        }
    }

    #[test]
    fn measure_hand_cases() {
        let model = StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let y = measure(&model, &DVector::from_row_slice(&[3.0, 4.0]), &DVector::zeros(2)).unwrap();
        assert_eq!(y, DVector::from_row_slice(&[3.0, 4.0]));

        let wide = StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let y = measure(
            &wide,
            &DVector::from_row_slice(&[1.0, 2.0]),
            &DVector::from_row_slice(&[-1.0]),
        )
        .unwrap();
        assert!((y[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn draw_noise_deterministic_and_scaled() {
        let sampler = GaussianSampler::new(DMatrix::identity(2, 2), 0).unwrap();
        let f = StreamFactory::new(5, 0);
        let a = sampler.draw(&mut f.stream(StreamId::Custom(1)));
        let b = sampler.draw(&mut f.stream(StreamId::Custom(1)));
        assert_eq!(a, b);

        // Covariance [[4]]: the draw is exactly 2x the standard normal.
        let wide = GaussianSampler::new(DMatrix::from_row_slice(1, 1, &[4.0]), 0).unwrap();
        let mut rng1 = f.stream(StreamId::Custom(2));
        let mut rng2 = f.stream(StreamId::Custom(2));
        let z: f64 = StandardNormal.sample(&mut rng1);
        let s = wide.draw(&mut rng2);
        assert!((s[0] - 2.0 * z).abs() < 1e-15);
    }

    #[test]
    fn draw_noise_sample_covariance_close() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let sampler = GaussianSampler::new(cov.clone(), 0).unwrap();
        let f = StreamFactory::new(17, 0);
        let mut rng = f.stream(StreamId::Custom(3));
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let s = sampler.draw(&mut rng);
            acc += &s * s.transpose();
        }
        acc /= n as f64;
        let err = crate::linalg::frobenius(&(&acc - &cov)) / crate::linalg::frobenius(&cov);
        assert!(err < 0.05, "relative covariance error {err}");
    }

    #[test]
    fn sampler_factor_reproduces_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let sampler = GaussianSampler::new(cov.clone(), 3).unwrap();
        let recon = &sampler.cholesky_factor * sampler.cholesky_factor.transpose();
        let rel = crate::linalg::frobenius(&(&recon - &cov)) / crate::linalg::frobenius(&cov);
        assert!(rel < 1e-10);
    }

    #[test]
    fn distinct_streams_uncorrelated() {
        let sampler = GaussianSampler::new(DMatrix::identity(1, 1), 0).unwrap();
        let f = StreamFactory::new(23, 0);
        let mut r1 = f.stream(StreamId::Process);
        let mut r2 = f.stream(StreamId::Sensor);
        let n = 100_000;
        let mut cross = 0.0;
        for _ in 0..n {
            cross += sampler.draw(&mut r1)[0] * sampler.draw(&mut r2)[0];
        }
        cross /= n as f64;
        // 3 standard errors of a product of independent standard normals.
        assert!(cross.abs() < 3.0 / (n as f64).sqrt(), "cross-cov {cross}");
    }

    #[test]
    fn long_run_covariance_matches_lyapunov() {
        // Stable A, zero input: stationary covariance solves X = AXA' + Q.
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]);
        let q = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);
        let model = StateSpaceModel::new(
            a.clone(),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            q.clone(),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let target = crate::linalg::solve_discrete_lyapunov(&a, &q).unwrap();

        let sampler = GaussianSampler::new(q, 0).unwrap();
        let f = StreamFactory::new(31, 0);
        let mut rng = f.stream(StreamId::Process);
        let mut x = DVector::zeros(2);
        let u = DVector::zeros(1);
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        let steps = 100_000;
        for _ in 0..steps {
            x = simulate_step(&model, &x, &u, &sampler.draw(&mut rng)).unwrap();
            acc += &x * x.transpose();
        }
        acc /= steps as f64;
        let rel = crate::linalg::frobenius(&(&acc - &target)) / crate::linalg::frobenius(&target);
        assert!(rel < 0.10, "relative error {rel}");
    }

    proptest! {
        #[test]
        fn step_and_measure_are_linear(
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            x1 in proptest::array::uniform2(-5.0f64..5.0),
            x2 in proptest::array::uniform2(-5.0f64..5.0),
        ) {
            let model = StateSpaceModel::new(
                DMatrix::from_row_slice(2, 2, &[0.3, -0.4, 0.1, 0.8]),
                DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
                DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]),
                DMatrix::identity(2, 2),
                DMatrix::identity(2, 2),
            ).unwrap();
            let u0 = DVector::zeros(1);
            let w0 = DVector::zeros(2);
            let v0 = DVector::zeros(2);
            let xa = DVector::from_row_slice(&x1);
            let xb = DVector::from_row_slice(&x2);
            let combo = alpha * &xa + beta * &xb;

            let lhs = simulate_step(&model, &combo, &u0, &w0).unwrap();
            let rhs = alpha * simulate_step(&model, &xa, &u0, &w0).unwrap()
                + beta * simulate_step(&model, &xb, &u0, &w0).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-10);

            let lhs = measure(&model, &combo, &v0).unwrap();
            let rhs = alpha * measure(&model, &xa, &v0).unwrap()
                + beta * measure(&model, &xb, &v0).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }
    }
}

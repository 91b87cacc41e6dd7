//! Scenario files: a versioned JSON schema, strict parsing (unknown keys
//! rejected, violations reported with a JSON-pointer path), and
//! instantiation into validated runtime objects.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lqg::{self, ControllerGains, CostSpec, EstimatorGains};
use crate::moving_target::{AugmentedNoiseSpec, DetectorConfig, TargetDistribution};
use crate::plant::{validate_model, StateSpaceModel};

pub const SCHEMA_VERSION: u32 = 1;

fn default_warmup() -> usize {
    200
}

fn default_particles() -> usize {
    1000
}

fn default_true() -> bool {
    true
}

fn default_period() -> f64 {
    50.0
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    pub base: BaseBlock,
    pub cost: CostBlock,
    /// Moving target block; null or absent disables the moving target.
    #[serde(default)]
    pub target: Option<TargetBlock>,
    pub detector: DetectorBlock,
    #[serde(default)]
    pub attack: AttackBlock,
    pub horizon: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBlock {
    pub w: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetBlock {
    pub nt: usize,
    pub mt: usize,
    pub a1_scale: f64,
    pub a2_scale: f64,
    pub b_scale: f64,
    pub c_scale: f64,
    pub rho_max: f64,
    pub q_t: f64,
    pub r_t: f64,
    /// The defender's secret matrix seed. When absent it is derived from
    /// the trial seed; when present it is pinned, so trials share the
    /// matrix stream (used for seed-invariance experiments).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Optional point-mass pins for individual matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1_fixed: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2_fixed: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_fixed: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_fixed: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    ZeroDyn,
    Attack1,
    Attack2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    #[serde(rename = "type")]
    pub kind: AttackKind,
    /// First attacked step, relative to the end of warm-up.
    #[serde(default)]
    pub start: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Attack 2: grant the adversary the defender's filter gains.
    #[serde(default = "default_true")]
    pub oracle_p: bool,
    /// Known-C special case: the adversary is granted the extraneous
    /// sensor map (requires target.c_fixed).
    #[serde(default)]
    pub attacker_knows_c: bool,
    #[serde(default)]
    pub u_a: ScheduleBlock,
}

impl Default for AttackBlock {
    fn default() -> Self {
        AttackBlock {
            kind: AttackKind::None,
            start: 0,
            particles: default_particles(),
            oracle_p: true,
            attacker_knows_c: false,
            u_a: ScheduleBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Ramp,
    Sinusoid,
}

/// The attacker's actuator injection over time, applied uniformly to all
/// input channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub kind: ScheduleKind,
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period: f64,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        ScheduleBlock {
            kind: ScheduleKind::Constant,
            amplitude: 1.0,
            period: default_period(),
        }
    }
}

impl ScheduleBlock {
    /// Injection magnitude at the given step since attack start.
    pub fn value(&self, steps_since_start: usize) -> f64 {
        let k = steps_since_start as f64;
        match self.kind {
            ScheduleKind::Constant => self.amplitude,
            ScheduleKind::Ramp => self.amplitude * k / self.period,
            ScheduleKind::Sinusoid => {
                self.amplitude * (2.0 * std::f64::consts::PI * k / self.period).sin()
            }
        }
    }
}

/// A validated, solver-ready scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub base: StateSpaceModel,
    pub cost: CostSpec,
    pub est: EstimatorGains,
    pub ctrl: ControllerGains,
    pub tdist: Option<TargetDistribution>,
    pub noise: AugmentedNoiseSpec,
    pub detector: DetectorConfig,
    pub horizon: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Stationary covariance of the plant state under the ideal closed
    /// loop; the initial-state distribution.
    pub sigma_x0: DMatrix<f64>,
}

impl Scenario {
    pub fn nt(&self) -> usize {
        self.noise.nt
    }

    pub fn mt(&self) -> usize {
        self.noise.mt
    }

    /// Residue dimension mt + m.
    pub fn dof(&self) -> usize {
        self.noise.mt + self.base.m
    }
}

fn parse_matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::config(field, "matrix must have at least one row"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::config(field, "matrix rows must be non-empty"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::config(
                format!("{field}/{i}"),
                format!("ragged matrix: row 0 has {ncols} entries, row {i} has {}", row.len()),
            ));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Parse and validate a scenario document from JSON text.
pub fn parse_config(text: &str) -> Result<ScenarioFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(
            format!("/{}", path.replace('.', "/")),
            e.inner().to_string(),
        )
    })?;
    if file.schema != SCHEMA_VERSION {
        return Err(Error::config(
            "/schema",
            format!("unsupported schema version {}, expected {SCHEMA_VERSION}", file.schema),
        ));
    }
    Ok(file)
}

/// Load a scenario document from disk.
pub fn load_config(path: &str) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Serialize a scenario document.
pub fn save_config(file: &ScenarioFile, path: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(file).expect("scenario serializes");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_string(),
        source,
    })
}

/// Canonical JSON used for the configuration hash in exported statistics.
pub fn canonical_json(file: &ScenarioFile) -> String {
    serde_json::to_string(file).expect("scenario serializes")
}

/// Instantiate the runtime scenario: build and validate the plant, solve
/// both Riccati equations, assemble the joint noise, and calibrate the
/// detector threshold.
pub fn instantiate(file: &ScenarioFile) -> Result<Scenario> {
    let a = parse_matrix("/base/a", &file.base.a)?;
    let b = parse_matrix("/base/b", &file.base.b)?;
    let c = parse_matrix("/base/c", &file.base.c)?;
    let q = parse_matrix("/base/q", &file.base.q)?;
    let r = parse_matrix("/base/r", &file.base.r)?;
    let base = StateSpaceModel::new(a, b, c, q, r).map_err(|e| match e {
        Error::Dimension(msg) => Error::config("/base", msg),
        other => other,
    })?;

    let report = validate_model(&base)?;
    if !report.all_passed() {
        let failures: Vec<String> = report
            .failures()
            .iter()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        return Err(Error::config("/base", failures.join("; ")));
    }

    let w = parse_matrix("/cost/w", &file.cost.w)?;
    let u = parse_matrix("/cost/u", &file.cost.u)?;
    if w.nrows() != base.n || w.ncols() != base.n {
        return Err(Error::config(
            "/cost/w",
            format!("W is {}x{}, model state dimension is {}", w.nrows(), w.ncols(), base.n),
        ));
    }
    if u.nrows() != base.p || u.ncols() != base.p {
        return Err(Error::config(
            "/cost/u",
            format!("U is {}x{}, model input dimension is {}", u.nrows(), u.ncols(), base.p),
        ));
    }
    let cost = CostSpec::new(w, u)?;

    if file.horizon < 1 {
        return Err(Error::config("/horizon", "horizon must be at least 1"));
    }

    let est = lqg::solve_estimation_dare(&base)?;
    let ctrl = lqg::solve_control_dare(&base, &cost)?;

    let (tdist, noise) = match &file.target {
        Some(t) => {
            let mut dist = TargetDistribution::new(
                t.nt, t.mt, t.a1_scale, t.a2_scale, t.b_scale, t.c_scale, t.rho_max,
                crate::rng::StreamId::Target.as_u64(),
            )?;
            let fixed = |field: &str, rows: &Option<Vec<Vec<f64>>>| -> Result<Option<DMatrix<f64>>> {
                rows.as_ref().map(|r| parse_matrix(field, r)).transpose()
            };
            dist = dist.with_fixed(
                fixed("/target/a1_fixed", &t.a1_fixed)?,
                fixed("/target/a2_fixed", &t.a2_fixed)?,
                fixed("/target/b_fixed", &t.b_fixed)?,
                fixed("/target/c_fixed", &t.c_fixed)?,
            )?;
            if !(t.q_t > 0.0) || !(t.r_t > 0.0) {
                return Err(Error::config(
                    "/target",
                    format!("q_t and r_t must be positive, got {} and {}", t.q_t, t.r_t),
                ));
            }
            let noise = AugmentedNoiseSpec::diagonal(&base, t.nt, t.mt, t.q_t, t.r_t)?;
            (Some(dist), noise)
        }
        None => {
            let noise = AugmentedNoiseSpec::new(&base, base.q.clone(), base.r.clone())?;
            (None, noise)
        }
    };

    if matches!(file.attack.kind, AttackKind::Attack1 | AttackKind::Attack2)
        && file.target.is_none()
    {
        return Err(Error::config(
            "/attack/type",
            "particle-filter attacks require a moving-target block; use zero_dyn or none",
        ));
    }
    if file.attack.attacker_knows_c {
        let pinned = file.target.as_ref().map(|t| t.c_fixed.is_some()).unwrap_or(false);
        if !pinned {
            return Err(Error::config(
                "/attack/attacker_knows_c",
                "the known-C special case requires target.c_fixed to pin the sensor map",
            ));
        }
    }
    if file.attack.kind != AttackKind::None && file.attack.start >= file.horizon {
        return Err(Error::config(
            "/attack/start",
            format!(
                "attack start {} is outside the recorded horizon {}",
                file.attack.start, file.horizon
            ),
        ));
    }

    let detector = DetectorConfig::new(file.detector.alpha, noise.mt + base.m)?;

    let closed_loop = &base.a + &base.b * &ctrl.l;
    let sigma_x0 = linalg::solve_discrete_lyapunov(&closed_loop, &base.q)?;

    Ok(Scenario {
        file: file.clone(),
        base,
        cost,
        est,
        ctrl,
        tdist,
        noise,
        detector,
        horizon: file.horizon,
        warmup: file.warmup,
        seed: file.seed,
        sigma_x0,
    })
}

/// Build a scenario file programmatically from matrices; the path tests and
/// examples use this instead of hand-writing JSON.
#[allow(clippy::too_many_arguments)]
pub fn make_file(
    base: &StateSpaceModel,
    w: &DMatrix<f64>,
    u: &DMatrix<f64>,
    target: Option<TargetBlock>,
    alpha: f64,
    attack: AttackBlock,
    horizon: usize,
    warmup: usize,
    seed: u64,
) -> ScenarioFile {
    ScenarioFile {
        schema: SCHEMA_VERSION,
        base: BaseBlock {
            a: matrix_to_rows(&base.a),
            b: matrix_to_rows(&base.b),
            c: matrix_to_rows(&base.c),
            q: matrix_to_rows(&base.q),
            r: matrix_to_rows(&base.r),
        },
        cost: CostBlock {
            w: matrix_to_rows(w),
            u: matrix_to_rows(u),
        },
        target,
        detector: DetectorBlock { alpha },
        attack,
        horizon,
        warmup,
        seed,
    }
}

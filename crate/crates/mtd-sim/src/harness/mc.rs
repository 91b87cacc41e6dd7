//! Monte Carlo detection statistics over independent seeded trials.
//!
//! Per-trial seeds are spawned from the master seed by index, so results
//! are identical for any degree of parallelism: trials are computed
//! independently and aggregated in index order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::config::{canonical_json, AttackKind, Scenario};
use crate::harness::sim::{run_trial, TrialTrace};
use crate::rng::derive_seed;
use crate::stats;

/// Compact per-trial record used for aggregation.
#[derive(Debug, Clone)]
pub struct TrialSummary {
    pub alarms: Vec<bool>,
    pub g: Vec<f64>,
    pub cost: f64,
    /// First alarm at or after the attack start, if any.
    pub first_alarm: Option<usize>,
}

pub fn summarize(scn: &Scenario, trace: &TrialTrace) -> Result<TrialSummary> {
    let attack_start = trace.attack_start.unwrap_or(0);
    let first_alarm = trace
        .steps
        .iter()
        .enumerate()
        .skip(attack_start)
        .find(|(_, s)| s.alarm)
        .map(|(k, _)| k);
    Ok(TrialSummary {
        alarms: trace.steps.iter().map(|s| s.alarm).collect(),
        g: trace.steps.iter().map(|s| s.g).collect(),
        cost: trace.cost(&scn.cost)?,
        first_alarm,
    })
}

/// A binomial rate with its Wilson 95% interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub successes: u64,
    pub n: u64,
}

impl RateEstimate {
    fn from_counts(successes: u64, n: u64) -> Self {
        let (ci_lo, ci_hi) = if n > 0 {
            stats::wilson_interval(successes, n, stats::Z_95)
        } else {
            (0.0, 1.0)
        };
        RateEstimate {
            rate: if n > 0 { successes as f64 / n as f64 } else { f64::NAN },
            ci_lo,
            ci_hi,
            successes,
            n,
        }
    }
}

/// Time-to-detection summary across trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeToDetection {
    pub detected: u64,
    pub trials: u64,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<usize>,
    pub max: Option<usize>,
}

/// Aggregated Monte Carlo statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialStats {
    pub version: String,
    pub config_sha256: String,
    pub trials: usize,
    pub horizon: usize,
    pub attack_start: Option<usize>,
    /// Alarm rate where the null hypothesis holds: before the attack
    /// starts, or everywhere when no attack is configured. Absent when the
    /// attack starts at step zero.
    pub alpha_hat: Option<RateEstimate>,
    /// Per-step alarm rate across trials.
    pub beta_hat: Vec<RateEstimate>,
    /// Per-step mean of the detection statistic.
    pub mean_g: Vec<f64>,
    /// Per-step standard error of the mean statistic.
    pub se_g: Vec<f64>,
    pub time_to_detection: TimeToDetection,
    pub cost_mean: f64,
    pub cost_se: f64,
}

/// Version string stamped into exported statistics.
pub fn version_string() -> String {
    format!("mtd-sim {}", env!("CARGO_PKG_VERSION"))
}

pub fn config_hash(scn: &Scenario) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_json(&scn.file).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Run `trials` independent trials (seeds derived from the scenario's
/// master seed) on `jobs` worker threads and aggregate.
pub fn run_monte_carlo(scn: &Scenario, trials: usize, jobs: usize) -> Result<TrialStats> {
    let summaries = run_summaries(scn, trials, jobs)?;
    aggregate(scn, &summaries)
}

/// The per-trial summaries behind [`run_monte_carlo`]; the bound pipeline
/// reuses them for its own comparisons.
pub fn run_summaries(scn: &Scenario, trials: usize, jobs: usize) -> Result<Vec<TrialSummary>> {
    if trials == 0 {
        return Err(Error::config("/trials", "trial count must be positive"));
    }
    let run_one = |i: usize| -> Result<TrialSummary> {
        let trace = run_trial(scn, derive_seed(scn.seed, i as u64))?;
        summarize(scn, &trace)
    };
    if jobs <= 1 {
        (0..trials).map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::numerical(format!("thread pool: {e}")))?;
        pool.install(|| (0..trials).into_par_iter().map(run_one).collect())
    }
}

fn aggregate(scn: &Scenario, summaries: &[TrialSummary]) -> Result<TrialStats> {
    let trials = summaries.len();
    let horizon = scn.horizon;
    let attack_start = match scn.file.attack.kind {
        AttackKind::None => None,
        _ => Some(scn.file.attack.start),
    };

    let mut per_step_alarms = vec![0u64; horizon];
    let mut g_sum = vec![0.0f64; horizon];
    let mut g_sq = vec![0.0f64; horizon];
    let mut costs = Vec::with_capacity(trials);
    let mut detection_times = Vec::new();
    for s in summaries {
        for (k, &alarm) in s.alarms.iter().enumerate() {
            if alarm {
                per_step_alarms[k] += 1;
            }
        }
        for (k, &g) in s.g.iter().enumerate() {
            g_sum[k] += g;
            g_sq[k] += g * g;
        }
        costs.push(s.cost);
        if attack_start.is_some() {
            if let Some(first) = s.first_alarm {
                detection_times.push(first - attack_start.unwrap());
            }
        }
    }

    let null_steps: usize = match attack_start {
        None => horizon,
        Some(s) => s,
    };
    let alpha_hat = if null_steps > 0 {
        let successes: u64 = per_step_alarms[..null_steps].iter().sum();
        Some(RateEstimate::from_counts(
            successes,
            (null_steps * trials) as u64,
        ))
    } else {
        None
    };

    let beta_hat = per_step_alarms
        .iter()
        .map(|&a| RateEstimate::from_counts(a, trials as u64))
        .collect();
    let mean_g: Vec<f64> = g_sum.iter().map(|s| s / trials as f64).collect();
    let se_g: Vec<f64> = g_sq
        .iter()
        .zip(&mean_g)
        .map(|(&sq, &m)| {
            if trials > 1 {
                let var = (sq / trials as f64 - m * m).max(0.0) * trials as f64
                    / (trials as f64 - 1.0);
                (var / trials as f64).sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();

    detection_times.sort_unstable();
    let ttd = TimeToDetection {
        detected: detection_times.len() as u64,
        trials: trials as u64,
        mean: (!detection_times.is_empty())
            .then(|| detection_times.iter().sum::<usize>() as f64 / detection_times.len() as f64),
        median: (!detection_times.is_empty())
            .then(|| detection_times[detection_times.len() / 2] as f64),
        min: detection_times.first().cloned(),
        max: detection_times.last().cloned(),
    };

    let cost_mean = stats::mean(&costs);
    let cost_se = if trials > 1 { stats::std_error(&costs) } else { f64::NAN };

    Ok(TrialStats {
        version: version_string(),
        config_sha256: config_hash(scn),
        trials,
        horizon,
        attack_start,
        alpha_hat,
        beta_hat,
        mean_g,
        se_g,
        time_to_detection: ttd,
        cost_mean,
        cost_se,
    })
}
